"""Dialect inventories, grapheme vocabulary, and the conditioning mechanisms.

Three ways of telling the network which dialect it is hearing: a dialect
token inside the decoder target sequence, a dialect vector appended to
layer inputs, and interpolation weights for the cluster-adapted encoder
branch. ``SYSTEM_PRESETS`` pins the S1..S9 experiment grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import VocabularyError
from .tensor import Tensor

SOS = "<sos>"
EOS = "<eos>"


@dataclass(frozen=True)
class Dialect:
    id: int
    code: str  # e.g. "en-gb"
    token: str  # e.g. "<en-gb>"


@dataclass
class DialectInventory:
    dialects: list[Dialect]
    vector_dim: int

    @classmethod
    def from_codes(cls, codes: list[str], vector_dim: int | None = None) -> "DialectInventory":
        if len(set(codes)) != len(codes):
            raise ValueError(f"duplicate dialect codes in {codes}")
        dialects = [Dialect(i, c, f"<{c}>") for i, c in enumerate(codes)]
        # one spare slot beyond the dialect count, mirroring an 8-wide
        # vector over seven dialects; override to taste
        if vector_dim is None:
            vector_dim = len(codes) + 1
        if vector_dim < len(codes):
            raise ValueError(f"vector_dim {vector_dim} < dialect count {len(codes)}")
        return cls(dialects, vector_dim)

    def __len__(self):
        return len(self.dialects)

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.dialects]

    @property
    def tokens(self) -> list[str]:
        return [d.token for d in self.dialects]

    def by_code(self, code: str) -> Dialect:
        for d in self.dialects:
            if d.code == code:
                return d
        raise KeyError(f"unknown dialect code {code!r}")

    def to_json(self) -> dict:
        return {
            "dialects": [{"id": d.id, "code": d.code, "token": d.token} for d in self.dialects],
            "vector_dim": self.vector_dim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DialectInventory":
        dialects = [Dialect(d["id"], d["code"], d["token"]) for d in obj["dialects"]]
        return cls(dialects, obj["vector_dim"])


class GraphemeVocab:
    """Symbol <-> id map over graphemes plus control and dialect tokens."""

    def __init__(self, symbols: list[str], dialect_token_codes: dict[str, str]):
        if len(set(symbols)) != len(symbols):
            raise VocabularyError("duplicate symbols in vocabulary")
        if SOS not in symbols or EOS not in symbols:
            raise VocabularyError(f"vocabulary must contain {SOS} and {EOS}")
        self.symbols = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self._token_code = dict(dialect_token_codes)  # token symbol -> dialect code
        self.sos_id = self.index[SOS]
        self.eos_id = self.index[EOS]
        self._dialect_ids = {self.index[t] for t in self._token_code if t in self.index}

    @classmethod
    def build(cls, graphemes, inventory: DialectInventory | None = None) -> "GraphemeVocab":
        symbols = [SOS, EOS] + sorted(set(graphemes))
        codes: dict[str, str] = {}
        if inventory is not None:
            for d in inventory.dialects:
                symbols.append(d.token)
                codes[d.token] = d.code
        return cls(symbols, codes)

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol: str):
        return symbol in self.index

    def id(self, symbol: str) -> int:
        try:
            return self.index[symbol]
        except KeyError:
            raise VocabularyError(f"symbol {symbol!r} not in vocabulary") from None

    def symbol(self, token_id: int) -> str:
        return self.symbols[token_id]

    def is_dialect_token(self, token_id: int) -> bool:
        return token_id in self._dialect_ids

    def dialect_code(self, token_id: int) -> str:
        return self._token_code[self.symbols[token_id]]

    @property
    def has_dialect_tokens(self) -> bool:
        return bool(self._dialect_ids)

    def to_json(self) -> dict:
        return {"symbols": self.symbols, "dialect_tokens": self._token_code}

    @classmethod
    def from_json(cls, obj: dict) -> "GraphemeVocab":
        return cls(obj["symbols"], obj["dialect_tokens"])


@dataclass(frozen=True)
class ConditioningMode:
    """How dialect identity enters the model. Encodes the experiment grid."""

    output_token: str = "none"  # none | begin | end
    encoder_vector: bool = False
    decoder_vector: bool = False
    vector_kind: str = "onehot"  # onehot | embedding
    cat_encoder: bool = False

    def __post_init__(self):
        if self.output_token not in ("none", "begin", "end"):
            raise ValueError(f"bad output_token {self.output_token!r}")
        if self.vector_kind not in ("onehot", "embedding"):
            raise ValueError(f"bad vector_kind {self.vector_kind!r}")

    @property
    def needs_vector(self) -> bool:
        return self.encoder_vector or self.decoder_vector or self.cat_encoder

    @property
    def uses_tokens(self) -> bool:
        return self.output_token != "none"

    def to_json(self) -> dict:
        return {
            "output_token": self.output_token,
            "encoder_vector": self.encoder_vector,
            "decoder_vector": self.decoder_vector,
            "vector_kind": self.vector_kind,
            "cat_encoder": self.cat_encoder,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConditioningMode":
        return cls(**obj)


SYSTEM_PRESETS: dict[str, ConditioningMode] = {
    "S1": ConditioningMode(),
    "S3": ConditioningMode(output_token="begin"),
    "S4": ConditioningMode(output_token="end"),
    "S5": ConditioningMode(encoder_vector=True),
    "S6": ConditioningMode(decoder_vector=True),
    "S7": ConditioningMode(encoder_vector=True, decoder_vector=True, vector_kind="onehot"),
    "S8": ConditioningMode(cat_encoder=True),
    "S9": ConditioningMode(
        output_token="end", encoder_vector=True, decoder_vector=True, vector_kind="onehot"
    ),
}

# systems where the 1-hot vs learned-embedding choice is a free knob
_KIND_CHOICE = {"S5", "S6", "S8"}


def system_mode(tag: str, vector_kind: str | None = None) -> ConditioningMode:
    """Expand a system tag (S1, S3..S9) into its conditioning mode."""
    if tag == "S2":
        raise ValueError("S2 is the per-dialect fine-tuned S1; use the finetune command")
    if tag not in SYSTEM_PRESETS:
        raise ValueError(f"unknown system tag {tag!r}; expected one of {sorted(SYSTEM_PRESETS)}")
    mode = SYSTEM_PRESETS[tag]
    if vector_kind is not None:
        if tag not in _KIND_CHOICE:
            if vector_kind != mode.vector_kind:
                raise ValueError(f"{tag} fixes vector_kind={mode.vector_kind}")
            return mode
        mode = replace(mode, vector_kind=vector_kind)
    return mode


def augment_targets(
    transcript: str,
    vocab: GraphemeVocab,
    dialect_token: str | None,
    mode: str,
) -> list[int]:
    """Decoder target ids: <sos> ... <eos> with the dialect token per mode."""
    if mode not in ("none", "begin", "end"):
        raise ValueError(f"bad augmentation mode {mode!r}")
    body = [vocab.id(ch) for ch in transcript]
    if mode == "none":
        return [vocab.sos_id] + body + [vocab.eos_id]
    if dialect_token is None:
        raise VocabularyError(f"mode {mode!r} needs a dialect token")
    tok = vocab.id(dialect_token)
    if mode == "begin":
        return [vocab.sos_id, tok] + body + [vocab.eos_id]
    return [vocab.sos_id] + body + [tok, vocab.eos_id]


def strip_dialect_tokens(token_ids, vocab: GraphemeVocab) -> tuple[str, str | None]:
    """Drop control and dialect tokens; report the last dialect token seen."""
    chars = []
    dialect = None
    for tid in token_ids:
        if tid == vocab.sos_id or tid == vocab.eos_id:
            continue
        if vocab.is_dialect_token(tid):
            dialect = vocab.dialect_code(tid)
            continue
        chars.append(vocab.symbol(tid))
    return "".join(chars), dialect


def dialect_vector(
    dialect_id: int,
    kind: str,
    inventory: DialectInventory,
    embedding: Tensor | None = None,
    dtype=np.float64,
) -> Tensor:
    """The per-dialect input vector: a 1-hot basis vector or a learned row."""
    if not 0 <= dialect_id < len(inventory):
        raise IndexError(f"dialect id {dialect_id} outside inventory of size {len(inventory)}")
    if kind == "onehot":
        v = np.zeros(inventory.vector_dim, dtype=dtype)
        v[dialect_id] = 1.0
        return Tensor(v)
    if kind == "embedding":
        if embedding is None:
            raise ValueError("embedding kind needs the learned dialect table")
        return T.row(embedding, dialect_id)
    raise ValueError(f"unknown dialect vector kind {kind!r}")
