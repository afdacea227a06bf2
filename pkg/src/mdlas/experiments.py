"""Experiment plumbing: system presets expanded into model configs, corpus
loading, and one-call training of a tagged system (S1, S3..S9)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import Manifest, SyntheticSpec, Utterance
from .dialects import DialectInventory, GraphemeVocab, system_mode
from .errors import DataError
from .model import CatConfig, Checkpoint, LasModel, ModelConfig
from .training import TrainConfig, TrainReport, train

DESK_MODEL = {"encoder": [64, 64, 64], "decoder": [64, 64], "attention_dim": 32, "embed_dim": 16}


@dataclass
class Corpus:
    spec: SyntheticSpec | None
    inventory: DialectInventory
    splits: dict[str, list[Utterance]]
    alphabet: set[str]
    feat_dim: int


def load_corpus(corpus_dir: str) -> Corpus:
    splits = {}
    inventory = None
    alphabet: set[str] = set()
    feat_dim = None
    for split in ("train", "dev", "test"):
        path = os.path.join(corpus_dir, split)
        if not os.path.isdir(path):
            raise DataError(f"corpus split directory missing: {path}")
        manifest = Manifest.load(path)
        splits[split] = manifest.load_utterances()
        inventory = manifest.inventory
        for e in manifest.entries:
            alphabet.update(e.transcript)
            feat_dim = e.dim
    spec = None
    spec_path = os.path.join(corpus_dir, "spec.json")
    if os.path.exists(spec_path):
        with open(spec_path) as f:
            spec = SyntheticSpec.from_json(json.load(f))
    return Corpus(spec, inventory, splits, alphabet, feat_dim)


def build_model_config(
    corpus: Corpus,
    system: str,
    vector_kind: str | None = None,
    model_overrides: dict | None = None,
) -> ModelConfig:
    """Model config for a system tag at desk scale over a generated corpus."""
    mode = system_mode(system, vector_kind)
    vocab = GraphemeVocab.build(
        corpus.alphabet, corpus.inventory if mode.uses_tokens else None
    )
    dims = dict(DESK_MODEL)
    overrides = dict(model_overrides or {})
    cat_overrides = overrides.pop("cat", None)
    dims.update(overrides)
    cat = None
    if mode.cat_encoder:
        cat_args = {
            "num_clusters": len(corpus.inventory),
            "cluster_hidden": 32,
            "source_layer": 1,
            "target_layer": max(2, len(dims["encoder"]) - 1),
        }
        if cat_overrides:
            cat_args.update(cat_overrides)
        cat = CatConfig(**cat_args)
    return ModelConfig(
        encoder=list(dims["encoder"]),
        decoder=list(dims["decoder"]),
        attention_dim=dims["attention_dim"],
        embed_dim=dims["embed_dim"],
        input_dim=4 * corpus.feat_dim,
        vocab=vocab,
        inventory=corpus.inventory,
        conditioning=mode,
        cat=cat,
        system=system,
    ).validate()


def train_system(
    corpus: Corpus,
    system: str,
    train_config: TrainConfig,
    vector_kind: str | None = None,
    model_overrides: dict | None = None,
) -> tuple[TrainReport, Checkpoint]:
    config = build_model_config(corpus, system, vector_kind, model_overrides)
    model = LasModel.init(config, seed=train_config.seed, precision="float32")
    return train(model, corpus.splits["train"], corpus.splits["dev"], train_config)


@dataclass
class ExperimentConfig:
    """One experiment as read from a CLI config file."""

    corpus: str = ""
    system: str = "S1"
    vector_kind: str | None = None
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        train_cfg = TrainConfig.from_json(obj["train"]) if "train" in obj else TrainConfig()
        return cls(
            corpus=obj.get("corpus", ""),
            system=obj.get("system", "S1"),
            vector_kind=obj.get("vector_kind"),
            model=obj.get("model", {}),
            train=train_cfg,
        )

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))
