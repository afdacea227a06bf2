"""Synchronous mini-batch SGD with dev-WER early stopping and fine-tuning.

One process, one thread, everything seeded: the same config and seed give
byte-identical checkpoints and reports.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Utterance, make_batches, model_inputs
from .errors import DataError, TrainingDiverged
from .model import Checkpoint, LasModel
from .tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    lr_decay: float = 0.98  # multiplicative, per epoch
    batch_size: int = 16
    max_epochs: int = 8
    wer_delta_threshold: float = 0.1  # absolute WER points, scaled to [0, 100]
    patience_evals: int = 3
    eval_every_n_steps: int = 500
    grad_clip_norm: float = 5.0
    seed: int = 0
    max_steps: int | None = None  # optional hard cap; 0 means evaluate only
    sort_by_length: bool = False

    def validate(self) -> "TrainConfig":
        positive = {
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "wer_delta_threshold": self.wer_delta_threshold,
            "eval_every_n_steps": self.eval_every_n_steps,
            "grad_clip_norm": self.grad_clip_norm,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.patience_evals < 1:
            raise ValueError("patience_evals must be >= 1")
        return self

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "wer_delta_threshold": self.wer_delta_threshold,
            "patience_evals": self.patience_evals,
            "eval_every_n_steps": self.eval_every_n_steps,
            "grad_clip_norm": self.grad_clip_norm,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "sort_by_length": self.sort_by_length,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj).validate()


@dataclass
class EvalRecord:
    step: int
    train_loss: float | None
    dev_wer: float  # uniform average over dialect dev sets
    per_dialect: dict[str, float]


@dataclass
class TrainReport:
    records: list[EvalRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_step: int = 0
    best_dev_wer: float = math.inf
    best_checkpoint_path: str = ""

    def to_json(self) -> dict:
        return {
            "records": [
                {
                    "step": r.step,
                    "train_loss": r.train_loss,
                    "dev_wer": r.dev_wer,
                    "per_dialect": r.per_dialect,
                }
                for r in self.records
            ],
            "stop_reason": self.stop_reason,
            "best_step": self.best_step,
            "best_dev_wer": self.best_dev_wer,
            "best_checkpoint_path": self.best_checkpoint_path,
        }


def sgd_update(values: list[np.ndarray], grads: list[np.ndarray], lr: float, clip_norm: float | None):
    """In-place SGD step with global-norm clipping.

    Clipping rescales all gradients by clip_norm/g when the global norm g
    exceeds clip_norm, so the direction never changes.
    """
    scale = 1.0
    if clip_norm is not None:
        sq = math.fsum(float((g * g).sum()) for g in grads)
        gnorm = math.sqrt(sq)
        if gnorm > clip_norm:
            scale = clip_norm / gnorm
    for v, g in zip(values, grads):
        v -= (lr * scale) * g.astype(v.dtype, copy=False)


def batch_loss(model: LasModel, batch) -> Tensor:
    """Mean of per-utterance teacher-forced losses (exactly rounded sum)."""
    losses = []
    for b, utt in enumerate(batch.utterances):
        tgt = batch.target_ids[b] if batch.target_ids is not None else None
        msk = batch.target_mask[b] if batch.target_mask is not None else None
        losses.append(
            model.teacher_forced_loss(
                model_inputs(utt, model.dtype),
                utt.transcript,
                utt.dialect_id,
                target_ids=tgt,
                target_mask=msk,
            )
        )
    return T.mul(T.add_n(losses), 1.0 / len(losses))


def dev_wer(model: LasModel, dev_utterances: list[Utterance]) -> tuple[float, dict[str, float]]:
    """Greedy-decode dev WER per dialect plus the uniform (macro) average.

    The macro average runs over the dialects present in the dev set, so
    the largest dialect cannot dominate checkpoint selection.
    """
    from .evaluation import evaluate

    report = evaluate(model, dev_utterances)
    per = {
        code: 100.0 * c.wer for code, c in report.counts.items() if c.ref_words > 0
    }
    macro = math.fsum(per.values()) / len(per)
    return macro, per


def train(
    model: LasModel,
    train_utterances: list[Utterance],
    dev_utterances: list[Utterance],
    config: TrainConfig,
) -> tuple[TrainReport, Checkpoint]:
    """SGD training loop; returns the report and the best checkpoint.

    Every eval_every_n_steps steps the dev WER is computed; the best
    parameters (by uniform-average dev WER) are kept. Training stops when
    the WER change stays under the threshold for ``patience_evals``
    consecutive evals, when max_epochs finish, or at max_steps.
    """
    config.validate()
    if not train_utterances:
        raise DataError("no training utterances")
    report = TrainReport()
    param_tensors = list(model.params.values())
    step = 0
    loss_acc: list[float] = []
    patience_left = config.patience_evals
    last_wer: float | None = None
    best: OrderedDict[str, np.ndarray] | None = None

    def run_eval(train_loss):
        nonlocal patience_left, last_wer, best
        macro, per = dev_wer(model, dev_utterances)
        report.records.append(EvalRecord(step, train_loss, macro, per))
        if macro < report.best_dev_wer:
            report.best_dev_wer = macro
            report.best_step = step
            best = OrderedDict((k, v.data.copy()) for k, v in model.params.items())
        if last_wer is not None and abs(macro - last_wer) < config.wer_delta_threshold:
            patience_left -= 1
        else:
            patience_left = config.patience_evals
        last_wer = macro
        return patience_left <= 0

    run_eval(None)
    stop = "max_epochs"
    if config.max_steps == 0:
        stop = "max_steps"
    else:
        done = False
        for epoch in range(config.max_epochs):
            if done:
                break
            lr = config.learning_rate * (config.lr_decay**epoch)
            batches = make_batches(
                train_utterances,
                config.batch_size,
                seed=config.seed * 100_003 + epoch,
                sort_by_length=config.sort_by_length,
                targets_fn=lambda u: model.targets_for(u.transcript, u.dialect_id),
            )
            for batch in batches:
                model.zero_grads()
                loss = batch_loss(model, batch)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(step, batch.ids)
                loss.backward()
                sgd_update(
                    [t.data for t in param_tensors],
                    [t.grad if t.grad is not None else np.zeros_like(t.data) for t in param_tensors],
                    lr,
                    config.grad_clip_norm,
                )
                loss_acc.append(float(loss.data))
                step += 1
                if step % config.eval_every_n_steps == 0:
                    mean_loss = math.fsum(loss_acc) / len(loss_acc)
                    loss_acc.clear()
                    if run_eval(mean_loss):
                        stop = "early_stop"
                        done = True
                        break
                if config.max_steps is not None and step >= config.max_steps:
                    stop = "max_steps"
                    done = True
                    break
        if not done or stop != "early_stop":
            # closing eval so the report always ends on a measured point
            if not report.records or report.records[-1].step != step:
                mean_loss = math.fsum(loss_acc) / len(loss_acc) if loss_acc else None
                run_eval(mean_loss)

    report.stop_reason = stop
    if best is not None:
        for name, arr in best.items():
            model.params[name].data = arr
    ckpt = Checkpoint.from_model(
        model,
        opt_state={"step": step, "learning_rate": config.learning_rate},
        wer_history=[[r.step, r.dev_wer] for r in report.records],
    )
    return report, ckpt


def fine_tune(
    base: Checkpoint,
    dialect_code: str,
    train_utterances: list[Utterance],
    dev_utterances: list[Utterance],
    config: TrainConfig,
) -> tuple[TrainReport, Checkpoint]:
    """Continue training on a single dialect's data, all parameters free.

    With ``max_steps == 0`` the returned checkpoint equals the base.
    """
    tr = [u for u in train_utterances if u.dialect_code == dialect_code]
    dv = [u for u in dev_utterances if u.dialect_code == dialect_code]
    if not tr or not dv:
        raise DataError(f"dialect {dialect_code!r} not present in the manifests")
    if config.max_steps == 0:
        return TrainReport(stop_reason="max_steps"), Checkpoint(
            base.config,
            OrderedDict((k, v.copy()) for k, v in base.params.items()),
            dict(base.opt_state),
            list(base.wer_history),
        )
    model = base.to_model(precision="float32")
    return train(model, tr, dv, config)
