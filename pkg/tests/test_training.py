import math
import os

import numpy as np
import pytest

from mdlas import tensor as T
from mdlas.data import default_spec, generate_corpus, make_batches, model_inputs
from mdlas.errors import DataError, TrainingDiverged
from mdlas.experiments import Corpus, build_model_config, train_system
from mdlas.model import Checkpoint, LasModel, load_checkpoint, save_checkpoint
from mdlas.training import TrainConfig, batch_loss, fine_tune, sgd_update, train

TINY_MODEL = {"encoder": [16, 16], "decoder": [16], "attention_dim": 12, "embed_dim": 8}


@pytest.fixture(scope="module")
def micro_corpus(tmp_path_factory):
    spec = default_spec(
        seed=3,
        train_counts={"en-us": 24, "en-gb": 24, "en-ke": 12},
        dev_count=6,
        test_count=6,
    )
    out = tmp_path_factory.mktemp("corpus")
    manifests = generate_corpus(spec, out)
    return Corpus(
        spec,
        spec.dialects,
        {k: m.load_utterances() for k, m in manifests.items()},
        spec.alphabet,
        spec.feat_dim,
    )


class TestSgdUpdate:
    def test_plain_arithmetic(self):
        v = [np.array([1.0])]
        sgd_update(v, [np.array([2.0])], lr=0.5, clip_norm=None)
        np.testing.assert_array_equal(v[0], [0.0])

    def test_clip_rescales_by_global_norm(self):
        v = [np.zeros(2), np.zeros(1)]
        grads = [np.array([6.0, 0.0]), np.array([8.0])]  # global norm 10
        sgd_update(v, grads, lr=1.0, clip_norm=1.0)
        np.testing.assert_allclose(v[0], [-0.6, 0.0])
        np.testing.assert_allclose(v[1], [-0.8])

    def test_zero_grads_no_change(self):
        v = [np.array([1.0, 2.0])]
        sgd_update(v, [np.zeros(2)], lr=0.7, clip_norm=1.0)
        np.testing.assert_array_equal(v[0], [1.0, 2.0])

    def test_no_clip_below_threshold(self):
        v = [np.array([1.0])]
        sgd_update(v, [np.array([0.5])], lr=1.0, clip_norm=10.0)
        np.testing.assert_allclose(v[0], [0.5])

    def test_clip_preserves_direction(self, rng):
        grads = [rng.normal(size=5) * 100, rng.normal(size=3) * 100]
        flat = np.concatenate(grads)
        v = [np.zeros(5), np.zeros(3)]
        sgd_update(v, grads, lr=1.0, clip_norm=2.0)
        step = -np.concatenate(v)
        cos = (step @ flat) / (np.linalg.norm(step) * np.linalg.norm(flat))
        assert abs(cos - 1.0) < 1e-12


class TestTrainConfig:
    def test_positive_fields_enforced(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ValueError):
            TrainConfig(patience_evals=0).validate()

    def test_json_round_trip(self):
        cfg = TrainConfig(max_steps=7)
        assert TrainConfig.from_json(cfg.to_json()) == cfg


def token_accuracy(model, utt):
    """Teacher-forced argmax accuracy over all prediction steps."""
    with T.no_grad():
        targets = model.targets_for(utt.transcript, utt.dialect_id)
        dialect = (
            model.dialect_vec(utt.dialect_id)
            if model.config.conditioning.needs_vector
            else None
        )
        enc = model.encode(model_inputs(utt, model.dtype), dialect)
        state = model.initial_state()
        hits = 0
        for k in range(len(targets) - 1):
            logits, state, _ = model.decode_step(targets[k], state, enc, dialect)
            hits += int(np.argmax(logits.data)) == targets[k + 1]
        return hits / (len(targets) - 1)


class TestTrainLoop:
    def test_overfit_single_utterance(self, micro_corpus):
        # one-utterance dataset makes every epoch a single step, so decay
        # must be off for the tuned lr to stay effective
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=0, precision="float32")
        utt = micro_corpus.splits["train"][0]
        tc = TrainConfig(
            learning_rate=0.3,
            lr_decay=1.0,
            batch_size=1,
            max_epochs=300,
            max_steps=300,
            eval_every_n_steps=100,
            patience_evals=10,
            seed=0,
        )
        report, _ = train(model, [utt], [utt], tc)
        assert token_accuracy(model, utt) == 1.0
        assert report.best_dev_wer == 0.0

    def test_zero_lr_keeps_parameters(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=0, precision="float32")
        before = {k: t.data.copy() for k, t in model.params.items()}
        tc = TrainConfig(
            learning_rate=1e-30, batch_size=8, max_epochs=1, eval_every_n_steps=4, seed=0
        )
        # lr must be positive by contract; 1e-30 underflows to no-op in f32
        train(model, micro_corpus.splits["train"], micro_corpus.splits["dev"][:3], tc)
        for k, arr in before.items():
            np.testing.assert_array_equal(model.params[k].data, arr)

    def test_early_stop_on_constant_wer(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=0, precision="float32")
        tc = TrainConfig(
            learning_rate=1e-30,
            batch_size=4,
            max_epochs=50,
            eval_every_n_steps=2,
            patience_evals=3,
            seed=0,
        )
        report, _ = train(model, micro_corpus.splits["train"][:8], micro_corpus.splits["dev"][:3], tc)
        assert report.stop_reason == "early_stop"
        # initial eval + exactly patience_evals more
        assert len(report.records) == 4
        steps = [r.step for r in report.records]
        assert steps == sorted(steps)

    def test_descent_on_fixed_batch(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=1, precision="float64")
        utts = micro_corpus.splits["train"][:4]
        batches = make_batches(
            utts, 4, seed=0, targets_fn=lambda u: model.targets_for(u.transcript, u.dialect_id)
        )
        batch = batches[0]
        losses = []
        for _ in range(10):
            model.zero_grads()
            loss = batch_loss(model, batch)
            losses.append(float(loss.data))
            loss.backward()
            sgd_update(
                [t.data for t in model.params.values()],
                [t.grad for t in model.params.values()],
                lr=0.02,
                clip_norm=5.0,
            )
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_batch_loss_permutation_covariant(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=0, precision="float64")
        utts = micro_corpus.splits["train"][:5]

        def loss_for(order):
            batches = make_batches(
                [utts[i] for i in order],
                5,
                seed=0,
                targets_fn=lambda u: model.targets_for(u.transcript, u.dialect_id),
            )
            # a single batch holds all five utterances regardless of order
            assert len(batches) == 1
            return float(batch_loss(model, batches[0]).data)

        a = loss_for([0, 1, 2, 3, 4])
        b = loss_for([4, 2, 0, 3, 1])
        assert a == b

    def test_batched_loss_equals_per_utterance_sum(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S4", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=0, precision="float64")
        utts = micro_corpus.splits["train"][:4]
        batches = make_batches(
            utts, 4, seed=0, targets_fn=lambda u: model.targets_for(u.transcript, u.dialect_id)
        )
        total = float(batch_loss(model, batches[0]).data) * len(batches[0].utterances)
        singles = [
            float(
                model.teacher_forced_loss(
                    model_inputs(u, model.dtype), u.transcript, u.dialect_id
                ).data
            )
            for u in batches[0].utterances
        ]
        assert total == pytest.approx(math.fsum(singles), rel=1e-14)

    def test_nan_loss_aborts_with_diagnostics(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=0, precision="float32")
        model.params["out.b"].data[0] = np.inf  # poisons the log-softmax
        tc = TrainConfig(batch_size=4, max_epochs=1, eval_every_n_steps=1000, seed=0)
        with pytest.raises(TrainingDiverged) as err:
            train(model, micro_corpus.splits["train"][:8], micro_corpus.splits["dev"][:2], tc)
        assert err.value.step == 0
        assert len(err.value.batch_ids) == 4

    def test_reproducible_checkpoint_bytes(self, micro_corpus, tmp_path):
        def run(out):
            cfg = build_model_config(micro_corpus, "S7", model_overrides=TINY_MODEL)
            model = LasModel.init(cfg, seed=9, precision="float32")
            tc = TrainConfig(
                batch_size=8, max_epochs=1, eval_every_n_steps=5, seed=9, learning_rate=0.05
            )
            report, ckpt = train(
                model, micro_corpus.splits["train"], micro_corpus.splits["dev"], tc
            )
            save_checkpoint(ckpt, out)
            return report

        r1 = run(tmp_path / "a")
        r2 = run(tmp_path / "b")
        assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()
        assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()
        assert [r.dev_wer for r in r1.records] == [r.dev_wer for r in r2.records]
        assert [r.train_loss for r in r1.records] == [r.train_loss for r in r2.records]


class TestFineTune:
    def base_checkpoint(self, micro_corpus):
        cfg = build_model_config(micro_corpus, "S1", model_overrides=TINY_MODEL)
        model = LasModel.init(cfg, seed=2, precision="float32")
        tc = TrainConfig(batch_size=8, max_epochs=1, eval_every_n_steps=100, seed=2)
        report, ckpt = train(model, micro_corpus.splits["train"], micro_corpus.splits["dev"], tc)
        return report, ckpt

    def test_zero_steps_equals_base(self, micro_corpus, tmp_path):
        _, base = self.base_checkpoint(micro_corpus)
        tc = TrainConfig(max_steps=0, seed=0)
        _, tuned = fine_tune(
            base, "en-gb", micro_corpus.splits["train"], micro_corpus.splits["dev"], tc
        )
        save_checkpoint(base, tmp_path / "base")
        save_checkpoint(tuned, tmp_path / "tuned")
        assert (tmp_path / "base" / "model.bin").read_bytes() == (
            tmp_path / "tuned" / "model.bin"
        ).read_bytes()
        assert (tmp_path / "base" / "model.json").read_bytes() == (
            tmp_path / "tuned" / "model.json"
        ).read_bytes()

    def test_missing_dialect_rejected(self, micro_corpus):
        _, base = self.base_checkpoint(micro_corpus)
        with pytest.raises(DataError):
            fine_tune(base, "en-au", micro_corpus.splits["train"], micro_corpus.splits["dev"], TrainConfig())

    def test_history_restarts_from_base_value(self, micro_corpus):
        from mdlas.training import dev_wer

        _, base = self.base_checkpoint(micro_corpus)
        tc = TrainConfig(batch_size=8, max_epochs=1, eval_every_n_steps=100, seed=5)
        report, _ = fine_tune(
            base, "en-gb", micro_corpus.splits["train"], micro_corpus.splits["dev"], tc
        )
        gb_dev = [u for u in micro_corpus.splits["dev"] if u.dialect_code == "en-gb"]
        base_wer, _ = dev_wer(base.to_model(), gb_dev)
        assert report.records[0].step == 0
        assert report.records[0].dev_wer == pytest.approx(base_wer, abs=1e-9)

    def test_all_parameters_move(self, micro_corpus):
        # enough steps that dev WER actually improves over the base model,
        # otherwise the best-checkpoint restore hands back the base weights
        _, base = self.base_checkpoint(micro_corpus)
        tc = TrainConfig(
            batch_size=8,
            max_epochs=100,
            eval_every_n_steps=30,
            patience_evals=30,
            seed=5,
            learning_rate=0.3,
            lr_decay=1.0,
        )
        # scoring the training subset: memorization is enough to show every
        # parameter group updating
        report, tuned = fine_tune(
            base, "en-us", micro_corpus.splits["train"], micro_corpus.splits["train"], tc
        )
        assert report.best_dev_wer < report.records[0].dev_wer
        moved = [
            name for name in base.params if not np.array_equal(base.params[name], tuned.params[name])
        ]
        assert {n.split(".")[0] for n in moved} >= {"enc", "dec", "att", "emb", "out"}
