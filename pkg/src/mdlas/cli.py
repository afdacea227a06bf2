"""Command line entry points: gen-data, train, finetune, eval, mismatch,
lexical. Exit codes: 0 success, 1 runtime failure, 2 usage or validation."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import SyntheticSpec, generate_corpus
from .errors import ContractError, DataError, ValidationError
from .evaluation import evaluate, lexical_switch_analysis, mismatch_matrix, write_lexical_csv
from .experiments import ExperimentConfig, load_corpus, train_system
from .model import load_checkpoint, save_checkpoint
from .training import TrainConfig, fine_tune


def _write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def cmd_gen_data(args) -> int:
    with open(args.spec) as f:
        spec = SyntheticSpec.from_json(json.load(f))
    if args.seed is not None:
        spec.seed = args.seed
        spec.validate()
    generate_corpus(spec, args.out)
    print(f"corpus written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.corpus:
        cfg.corpus = args.corpus
    if args.system:
        cfg.system = args.system
    if args.vector_kind:
        cfg.vector_kind = args.vector_kind
    if args.seed is not None:
        cfg.train.seed = args.seed
    if not cfg.corpus:
        raise ValidationError("corpus", "no corpus directory given")
    corpus = load_corpus(cfg.corpus)
    report, ckpt = train_system(corpus, cfg.system, cfg.train, cfg.vector_kind, cfg.model)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(ckpt, args.out)
    report.best_checkpoint_path = "model.json"
    _write_json(report.to_json(), os.path.join(args.out, "train_report.json"))
    _write_json(cfg.train.to_json(), os.path.join(args.out, "train.json"))
    print(f"{cfg.system}: best dev WER {report.best_dev_wer:.2f} at step {report.best_step}")
    return 0


def cmd_finetune(args) -> int:
    base = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.max_steps is not None:
        cfg.train.max_steps = args.max_steps
    report, ckpt = fine_tune(
        base, args.dialect, corpus.splits["train"], corpus.splits["dev"], cfg.train
    )
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(ckpt, args.out)
    report.best_checkpoint_path = "model.json"
    _write_json(report.to_json(), os.path.join(args.out, "train_report.json"))
    print(f"fine-tuned on {args.dialect}")
    return 0


def _parse_feed(value: str):
    if value == "oracle":
        return "oracle"
    if value.startswith("fixed:"):
        return ("fixed_code", value.split(":", 1)[1])
    raise ValidationError("dialect-feed", f"expected 'oracle' or 'fixed:CODE', got {value!r}")


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.to_model()
    corpus = load_corpus(args.corpus)
    utts = corpus.splits[args.split]
    feed = _parse_feed(args.dialect_feed)
    if isinstance(feed, tuple):
        feed = ("fixed", model.config.inventory.by_code(feed[1]).id)
    report = evaluate(model, utts, dialect_feed=feed)
    _write_json(report.to_json(), args.out)
    per = " ".join(f"{c}={w:.3f}" for c, w in report.per_dialect_wer.items())
    print(f"overall WER {report.overall_wer:.3f} ({per})")
    return 0


def cmd_mismatch(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.to_model()
    corpus = load_corpus(args.corpus)
    matrix = mismatch_matrix(model, corpus.splits[args.split], args.site)
    matrix.write_csv(args.out)
    print(f"mean off-diagonal relative WER change: {matrix.mean_off_diagonal():.4f}")
    return 0


def cmd_lexical(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.to_model()
    corpus = load_corpus(args.corpus)
    if corpus.spec is None or not corpus.spec.minimal_pairs:
        raise DataError("corpus spec.json with minimal_pairs is required")
    results = lexical_switch_analysis(model, corpus.spec.minimal_pairs, corpus.splits[args.split])
    write_lexical_csv(results, args.out)
    for r in results:
        rate = "n/a" if r.switch_rate is None else f"{r.switch_rate:.3f}"
        print(f"{r.pair[1]}/{r.pair[3]}: switch rate {rate} over {r.occurrences} occurrences")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdlas", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a multi-dialect corpus")
    g.add_argument("--spec", required=True, help="SyntheticSpec json file")
    g.add_argument("--out", required=True, help="output corpus directory")
    g.add_argument("--seed", type=int, default=None, help="override the spec seed")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a tagged system (S1, S3..S9)")
    t.add_argument("--config", default=None, help="experiment config json")
    t.add_argument("--corpus", default=None, help="corpus directory")
    t.add_argument("--system", default=None, help="system tag, e.g. S7")
    t.add_argument("--vector-kind", choices=["onehot", "embedding"], default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True, help="checkpoint/report directory")
    t.set_defaults(fn=cmd_train)

    f = sub.add_parser("finetune", help="fine-tune a checkpoint on one dialect")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--corpus", required=True)
    f.add_argument("--dialect", required=True, help="dialect code, e.g. en-gb")
    f.add_argument("--config", default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--max-steps", type=int, default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_finetune)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="test", choices=["train", "dev", "test"])
    e.add_argument("--dialect-feed", default="oracle", help="oracle or fixed:CODE")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", required=True, help="eval report json path")
    e.set_defaults(fn=cmd_eval)

    m = sub.add_parser("mismatch", help="wrong-dialect-vector WER matrix")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--corpus", required=True)
    m.add_argument("--split", default="test", choices=["dev", "test"])
    m.add_argument("--site", default="encoder", choices=["encoder", "decoder", "both"])
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--out", required=True, help="csv path")
    m.set_defaults(fn=cmd_mismatch)

    x = sub.add_parser("lexical", help="spelling-variant switch analysis")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--corpus", required=True)
    x.add_argument("--split", default="test", choices=["dev", "test"])
    x.add_argument("--seed", type=int, default=None)
    x.add_argument("--out", required=True, help="csv path")
    x.set_defaults(fn=cmd_lexical)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, ValueError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
