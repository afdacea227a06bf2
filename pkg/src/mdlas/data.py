"""Synthetic multi-dialect corpus generation, the frame stacking frontend,
and dataset/batch plumbing.

The generator stands in for a large proprietary corpus while keeping its
structure: per-dialect utterance amounts (unbalanced), dialect-specific
"accent" offsets in feature space, dialect-specific spellings for a few
words (the color/colour phenomenon), and train/dev/test splits that are
disjoint by sentence.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dialects import DialectInventory
from .errors import DataError, ShapeError, ValidationError

SILENCE_PHONE = "_sil"


@dataclass
class Utterance:
    utterance_id: str
    features: np.ndarray  # [T, D_feat] raw frames
    transcript: str
    dialect_id: int
    dialect_code: str


@dataclass
class SyntheticSpec:
    """Everything needed to synthesize a deterministic multi-dialect corpus."""

    dialects: DialectInventory
    lexicon: dict[str, list[str]]  # word -> phone sequence
    spellings: dict[str, dict[str, str]]  # dialect code -> word -> spelling
    phone_prototypes: dict[str, list[float]]  # phone -> mean feature vector
    dialect_offsets: dict[str, list[float]]  # dialect code -> accent offset
    word_weights: dict[str, dict[str, float]]  # dialect code -> unigram weights
    utterances: dict[str, dict[str, int]]  # split -> dialect code -> count
    minimal_pairs: list[list[str]]  # [dialect_a, spelling_a, dialect_b, spelling_b]
    dur_range: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.1
    words_per_utterance: tuple[int, int] = (1, 5)
    feat_dim: int = 8
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if not self.lexicon:
            raise ValidationError("lexicon", "needs at least one word")
        codes = self.dialects.codes
        if not codes:
            raise ValidationError("dialects", "inventory is empty")
        for code in codes:
            table = self.spellings.get(code)
            if table is None:
                raise ValidationError("spellings", f"missing table for dialect {code}")
            for word in self.lexicon:
                if word not in table:
                    raise ValidationError("spellings", f"{code} has no spelling for {word!r}")
        known = set(self.phone_prototypes)
        for word, phones in self.lexicon.items():
            if not phones:
                raise ValidationError("lexicon", f"word {word!r} has no phones")
            for ph in phones:
                if ph not in known:
                    raise ValidationError("phone_prototypes", f"no prototype for phone {ph!r}")
        if SILENCE_PHONE not in known:
            raise ValidationError("phone_prototypes", f"missing {SILENCE_PHONE} prototype")
        for ph, proto in self.phone_prototypes.items():
            if len(proto) != self.feat_dim:
                raise ValidationError(
                    "phone_prototypes", f"{ph} has dim {len(proto)}, expected {self.feat_dim}"
                )
        for code in codes:
            if code not in self.dialect_offsets:
                raise ValidationError("dialect_offsets", f"missing offset for {code}")
            if len(self.dialect_offsets[code]) != self.feat_dim:
                raise ValidationError("dialect_offsets", f"{code} offset has wrong dim")
            if code not in self.word_weights:
                raise ValidationError("word_weights", f"missing weights for {code}")
        for split in ("train", "dev", "test"):
            if split not in self.utterances:
                raise ValidationError("utterances", f"missing {split} counts")
            for code in codes:
                n = self.utterances[split].get(code)
                if not isinstance(n, int) or n < 1:
                    raise ValidationError("utterances", f"{split}/{code} needs a positive count")
        if not (1 <= self.dur_range[0] <= self.dur_range[1]):
            raise ValidationError("dur_range", f"bad range {self.dur_range}")
        if not (1 <= self.words_per_utterance[0] <= self.words_per_utterance[1]):
            raise ValidationError("words_per_utterance", f"bad range {self.words_per_utterance}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma", "must be >= 0")
        for pair in self.minimal_pairs:
            if len(pair) != 4:
                raise ValidationError("minimal_pairs", f"bad entry {pair}")
        return self

    @property
    def alphabet(self) -> set[str]:
        chars: set[str] = {" "}
        for table in self.spellings.values():
            for spelling in table.values():
                chars.update(spelling)
        return chars

    def to_json(self) -> dict:
        return {
            "dialects": self.dialects.to_json(),
            "lexicon": self.lexicon,
            "spellings": self.spellings,
            "phone_prototypes": self.phone_prototypes,
            "dialect_offsets": self.dialect_offsets,
            "word_weights": self.word_weights,
            "utterances": self.utterances,
            "minimal_pairs": self.minimal_pairs,
            "dur_range": list(self.dur_range),
            "noise_sigma": self.noise_sigma,
            "words_per_utterance": list(self.words_per_utterance),
            "feat_dim": self.feat_dim,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        try:
            return cls(
                dialects=DialectInventory.from_json(obj["dialects"]),
                lexicon={w: list(p) for w, p in obj["lexicon"].items()},
                spellings=obj["spellings"],
                phone_prototypes=obj["phone_prototypes"],
                dialect_offsets=obj["dialect_offsets"],
                word_weights=obj["word_weights"],
                utterances=obj["utterances"],
                minimal_pairs=[list(p) for p in obj["minimal_pairs"]],
                dur_range=tuple(obj["dur_range"]),
                noise_sigma=obj["noise_sigma"],
                words_per_utterance=tuple(obj["words_per_utterance"]),
                feat_dim=obj["feat_dim"],
                seed=obj["seed"],
            ).validate()
        except KeyError as exc:
            raise ValidationError(str(exc.args[0]), "missing field") from None


def default_spec(
    seed: int = 0,
    train_counts: dict[str, int] | None = None,
    dev_count: int = 200,
    test_count: int = 200,
    noise_sigma: float = 0.35,
    accent_scale: float = 1.1,
) -> SyntheticSpec:
    """Desk-scale three-dialect corpus spec with color/colour style pairs.

    Phone prototypes sit on scaled random sign vectors; dialect offsets are
    strong enough that, with noise, phone identity is ambiguous without
    knowing the dialect. Word frequencies differ mildly per dialect.
    """
    inventory = DialectInventory.from_codes(["en-us", "en-gb", "en-ke"])
    lexicon = {
        "color": ["k", "o", "l", "r"],
        "labor": ["l", "a", "b", "r"],
        "center": ["s", "e", "n", "t", "r"],
        "water": ["w", "o", "t", "r"],
        "dinner": ["d", "i", "n", "r"],
        "sun": ["s", "a", "n"],
        "rain": ["r", "e", "n"],
        "wind": ["w", "i", "n", "d"],
        "stone": ["s", "t", "o", "n"],
        "basket": ["b", "a", "s", "k", "t"],
        "wonder": ["w", "o", "n", "d", "r"],
        "melon": ["m", "e", "l", "n"],
    }
    # three words spell differently in en-gb/en-ke, the rest are shared
    variants = {"color": "colour", "labor": "labour", "center": "centre"}
    spellings: dict[str, dict[str, str]] = {}
    for code in inventory.codes:
        table = {w: w for w in lexicon}
        if code in ("en-gb", "en-ke"):
            table.update(variants)
        spellings[code] = table
    minimal_pairs = [["en-us", us, "en-gb", gb] for us, gb in variants.items()]

    phones = sorted({ph for seq in lexicon.values() for ph in seq}) + [SILENCE_PHONE]
    feat_dim = 8
    rng = np.random.default_rng(seed + 7_919)
    prototypes = {}
    for ph in phones:
        v = rng.choice([-1.0, 1.0], size=feat_dim) * rng.uniform(0.8, 1.2, size=feat_dim)
        if ph == SILENCE_PHONE:
            v = np.zeros(feat_dim)
        prototypes[ph] = [round(float(x), 6) for x in v]
    offsets = {}
    for code in inventory.codes:
        off = rng.normal(0.0, 1.0, size=feat_dim)
        off = off / np.linalg.norm(off) * accent_scale
        offsets[code] = [round(float(x), 6) for x in off]

    words = sorted(lexicon)
    word_weights: dict[str, dict[str, float]] = {}
    for i, code in enumerate(inventory.codes):
        w = rng.dirichlet(np.full(len(words), 6.0))
        word_weights[code] = {word: round(float(x), 6) for word, x in zip(words, w)}

    counts = train_counts or {"en-us": 2000, "en-gb": 2000, "en-ke": 500}
    utterances = {
        "train": counts,
        "dev": {c: dev_count for c in inventory.codes},
        "test": {c: test_count for c in inventory.codes},
    }
    return SyntheticSpec(
        dialects=inventory,
        lexicon=lexicon,
        spellings=spellings,
        phone_prototypes=prototypes,
        dialect_offsets=offsets,
        word_weights=word_weights,
        utterances=utterances,
        minimal_pairs=minimal_pairs,
        noise_sigma=noise_sigma,
        seed=seed,
    ).validate()


# ---------------------------------------------------------------------------
# manifests and feature files


@dataclass
class ManifestEntry:
    id: str
    offset: int  # byte offset into the split's features.bin
    frames: int
    dim: int
    transcript: str
    dialect: str


@dataclass
class Manifest:
    split: str
    entries: list[ManifestEntry]
    inventory: DialectInventory
    directory: str = ""

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "features_file": "features.bin",
            "inventory": self.inventory.to_json(),
            "utterances": [
                {
                    "id": e.id,
                    "offset": e.offset,
                    "frames": e.frames,
                    "dim": e.dim,
                    "transcript": e.transcript,
                    "dialect": e.dialect,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def load(cls, directory: str) -> "Manifest":
        with open(os.path.join(directory, "manifest.json")) as f:
            obj = json.load(f)
        entries = [
            ManifestEntry(
                u["id"], u["offset"], u["frames"], u["dim"], u["transcript"], u["dialect"]
            )
            for u in obj["utterances"]
        ]
        return cls(obj["split"], entries, DialectInventory.from_json(obj["inventory"]), directory)

    def load_utterances(self) -> list[Utterance]:
        if not self.entries:
            raise DataError(f"manifest for split {self.split!r} is empty")
        path = os.path.join(self.directory, "features.bin")
        with open(path, "rb") as f:
            blob = f.read()
        code_to_id = {d.code: d.id for d in self.inventory.dialects}
        out = []
        for e in self.entries:
            arr = np.frombuffer(
                blob, dtype="<f4", count=e.frames * e.dim, offset=e.offset
            ).reshape(e.frames, e.dim)
            out.append(
                Utterance(e.id, arr.copy(), e.transcript, code_to_id[e.dialect], e.dialect)
            )
        return out


def _sentence_split(words: tuple[str, ...], seed: int) -> str:
    """Deterministic sentence -> split partition (disjoint by construction)."""
    h = zlib.crc32(f"{seed}|{' '.join(words)}".encode()) % 100
    if h < 80:
        return "train"
    if h < 90:
        return "dev"
    return "test"


def generate_corpus(spec: SyntheticSpec, out_dir: str) -> dict[str, Manifest]:
    """Write train/dev/test manifests plus feature files; returns manifests.

    Deterministic given ``spec.seed``: same spec twice produces identical
    bytes. Splits are disjoint by sampled word sequence.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    codes = spec.dialects.codes
    words_sorted = sorted(spec.lexicon)
    manifests: dict[str, Manifest] = {}
    lo_w, hi_w = spec.words_per_utterance
    lo_d, hi_d = spec.dur_range

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "spec.json"), "w") as f:
        json.dump(spec.to_json(), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")

    for split in ("train", "dev", "test"):
        entries: list[ManifestEntry] = []
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        offset = 0
        with open(os.path.join(split_dir, "features.bin"), "wb") as fbin:
            for code in codes:
                probs = np.array([spec.word_weights[code][w] for w in words_sorted])
                probs = probs / probs.sum()
                offset_vec = np.asarray(spec.dialect_offsets[code])
                for i in range(spec.utterances[split][code]):
                    for _ in range(10_000):
                        n_words = int(rng.integers(lo_w, hi_w + 1))
                        sent = tuple(rng.choice(words_sorted, size=n_words, p=probs))
                        if _sentence_split(sent, spec.seed) == split:
                            break
                    else:
                        raise DataError(f"could not sample a {split} sentence")
                    phones: list[str] = []
                    for k, w in enumerate(sent):
                        if k:
                            phones.append(SILENCE_PHONE)
                        phones.extend(spec.lexicon[w])
                    blocks = []
                    for ph in phones:
                        dur = int(rng.integers(lo_d, hi_d + 1))
                        base = np.asarray(spec.phone_prototypes[ph]) + offset_vec
                        frames = np.tile(base, (dur, 1))
                        if spec.noise_sigma > 0:
                            frames = frames + rng.normal(
                                0.0, spec.noise_sigma, size=frames.shape
                            )
                        blocks.append(frames)
                    feats = np.concatenate(blocks).astype("<f4")
                    transcript = " ".join(spec.spellings[code][w] for w in sent)
                    uid = f"{split}-{code}-{i:05d}"
                    raw = feats.tobytes()
                    fbin.write(raw)
                    entries.append(
                        ManifestEntry(
                            uid, offset, feats.shape[0], feats.shape[1], transcript, code
                        )
                    )
                    offset += len(raw)
        manifest = Manifest(split, entries, spec.dialects, split_dir)
        with open(os.path.join(split_dir, "manifest.json"), "w") as f:
            json.dump(manifest.to_json(), f, sort_keys=True, separators=(",", ":"))
            f.write("\n")
        manifests[split] = manifest
    return manifests


def separability_check(spec: SyntheticSpec) -> float:
    """Fraction of noiseless frames whose nearest (phone, dialect) centroid
    recovers the phone. A generator self-test; should be ~1.0."""
    phones = sorted(spec.phone_prototypes)
    centroids = []
    labels = []
    for ph in phones:
        for code in spec.dialects.codes:
            centroids.append(
                np.asarray(spec.phone_prototypes[ph]) + np.asarray(spec.dialect_offsets[code])
            )
            labels.append(ph)
    cents = np.stack(centroids)
    correct = 0
    total = 0
    for ph in phones:
        for code in spec.dialects.codes:
            frame = np.asarray(spec.phone_prototypes[ph]) + np.asarray(
                spec.dialect_offsets[code]
            )
            d = ((cents - frame) ** 2).sum(axis=1)
            correct += labels[int(np.argmin(d))] == ph
            total += 1
    return correct / total


# ---------------------------------------------------------------------------
# frame stacking frontend


def stack_and_downsample(frames: np.ndarray, stride: int = 3, left: int = 3) -> np.ndarray:
    """Stack each kept frame with its left context and drop 2 of every 3.

    Output row k covers input times (3k-3, 3k-2, 3k-1, 3k), with times
    before the signal replicated from frame 0. Output width is 4x input
    width; output length is ceil(T / 3).
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ShapeError(f"expected a nonempty [T, D] frame matrix, got {frames.shape}")
    t_total = frames.shape[0]
    kept = np.arange(0, t_total, stride)
    cols = [np.clip(kept - (left - j), 0, t_total - 1) for j in range(left)] + [kept]
    return np.concatenate([frames[c] for c in cols], axis=1)


def model_inputs(utt: Utterance, dtype=np.float32) -> np.ndarray:
    return stack_and_downsample(utt.features).astype(dtype)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    utterances: list[Utterance]
    frame_counts: list[int]
    frame_mask: np.ndarray  # [B, T_max] True on real frames
    target_ids: np.ndarray | None = None  # [B, L_max] padded with 0
    target_mask: np.ndarray | None = None  # [B, L_max-1] True on real prediction steps

    @property
    def ids(self) -> list[str]:
        return [u.utterance_id for u in self.utterances]


def make_batches(
    utterances: list[Utterance],
    batch_size: int,
    seed: int,
    sort_by_length: bool = False,
    targets_fn=None,
) -> list[Batch]:
    """Deterministically shuffled batches for one epoch.

    ``targets_fn(utterance) -> list[int]`` attaches padded decoder targets
    and the mask over real prediction steps (the mask is what the loss
    consumes, so padding never contributes gradient).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not utterances:
        raise DataError("empty utterance list")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(utterances))
    utts = [utterances[i] for i in order]
    if sort_by_length:
        utts.sort(key=lambda u: u.features.shape[0])
        chunks = [utts[i : i + batch_size] for i in range(0, len(utts), batch_size)]
        chunk_order = rng.permutation(len(chunks))
        chunks = [chunks[i] for i in chunk_order]
    else:
        chunks = [utts[i : i + batch_size] for i in range(0, len(utts), batch_size)]

    batches = []
    for chunk in chunks:
        counts = [u.features.shape[0] for u in chunk]
        t_max = max(counts)
        fmask = np.zeros((len(chunk), t_max), dtype=bool)
        for b, n in enumerate(counts):
            fmask[b, :n] = True
        tgt = tmask = None
        if targets_fn is not None:
            seqs = [targets_fn(u) for u in chunk]
            l_max = max(len(s) for s in seqs)
            tgt = np.zeros((len(chunk), l_max), dtype=np.int64)
            tmask = np.zeros((len(chunk), l_max - 1), dtype=bool)
            for b, s in enumerate(seqs):
                tgt[b, : len(s)] = s
                tmask[b, : len(s) - 1] = True
        batches.append(Batch(chunk, counts, fmask, tgt, tmask))
    return batches
