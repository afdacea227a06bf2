"""The LAS network: LSTM encoder (optionally dialect-conditioned, optionally
cluster-adapted), additive attention, LSTM decoder with grapheme softmax.

Covers teacher-forced training loss, greedy and beam inference, parameter
counting, and the checkpoint file format (model.json + model.bin).
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dialects import (
    ConditioningMode,
    DialectInventory,
    GraphemeVocab,
    dialect_vector,
)
from .errors import ContractError, DataError, ShapeError
from .layers import (
    AttentionParams,
    EmbeddingParams,
    LstmParams,
    attention_enc_proj,
    embed,
    fused_attention,
    lstm_cell_step,
    lstm_layer_sequence,
)
from .tensor import Precision, Tensor


@dataclass
class CatConfig:
    """Cluster-adapted encoder branch: per-cluster LSTMs over an early layer's
    output, projected and added to a later layer's output."""

    num_clusters: int
    cluster_hidden: int = 128
    source_layer: int = 1  # 1-based
    target_layer: int = 4

    def to_json(self):
        return {
            "num_clusters": self.num_clusters,
            "cluster_hidden": self.cluster_hidden,
            "source_layer": self.source_layer,
            "target_layer": self.target_layer,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass
class ModelConfig:
    encoder: list[int]
    decoder: list[int]
    attention_dim: int
    embed_dim: int
    input_dim: int
    vocab: GraphemeVocab
    inventory: DialectInventory
    conditioning: ConditioningMode = field(default_factory=ConditioningMode)
    cat: CatConfig | None = None
    system: str | None = None

    def validate(self):
        if not self.encoder or not self.decoder:
            raise ValueError("need at least one encoder and one decoder layer")
        if any(h <= 0 for h in self.encoder + self.decoder):
            raise ValueError("layer widths must be positive")
        if min(self.attention_dim, self.embed_dim, self.input_dim) <= 0:
            raise ValueError("attention_dim, embed_dim and input_dim must be positive")
        if self.conditioning.uses_tokens != self.vocab.has_dialect_tokens:
            raise ValueError(
                "dialect tokens must be in the vocabulary exactly when the "
                "conditioning mode writes them into the targets"
            )
        if self.conditioning.cat_encoder:
            if self.cat is None:
                raise ValueError("cat_encoder mode needs a CatConfig")
            if not (1 <= self.cat.source_layer < self.cat.target_layer <= len(self.encoder)):
                raise ValueError(
                    f"cat layers (source {self.cat.source_layer}, target "
                    f"{self.cat.target_layer}) must satisfy source < target <= "
                    f"{len(self.encoder)}"
                )
        return self

    @property
    def vector_dim(self) -> int:
        return self.inventory.vector_dim

    def to_json(self):
        return {
            "encoder": self.encoder,
            "decoder": self.decoder,
            "attention_dim": self.attention_dim,
            "embed_dim": self.embed_dim,
            "input_dim": self.input_dim,
            "vocab": self.vocab.to_json(),
            "inventory": self.inventory.to_json(),
            "conditioning": self.conditioning.to_json(),
            "cat": self.cat.to_json() if self.cat else None,
            "system": self.system,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            encoder=list(obj["encoder"]),
            decoder=list(obj["decoder"]),
            attention_dim=obj["attention_dim"],
            embed_dim=obj["embed_dim"],
            input_dim=obj["input_dim"],
            vocab=GraphemeVocab.from_json(obj["vocab"]),
            inventory=DialectInventory.from_json(obj["inventory"]),
            conditioning=ConditioningMode.from_json(obj["conditioning"]),
            cat=CatConfig.from_json(obj["cat"]) if obj.get("cat") else None,
            system=obj.get("system"),
        ).validate()


# ---------------------------------------------------------------------------
# parameter inventory


def _encoder_widths(config: ModelConfig) -> list[tuple[int, int]]:
    vec = config.vector_dim if config.conditioning.encoder_vector else 0
    widths = []
    prev = config.input_dim
    for h in config.encoder:
        widths.append((prev + vec, h))
        prev = h
    return widths


def _decoder_widths(config: ModelConfig) -> list[tuple[int, int]]:
    vec = config.vector_dim if config.conditioning.decoder_vector else 0
    widths = []
    prev = config.embed_dim + config.encoder[-1]
    for h in config.decoder:
        widths.append((prev + vec, h))
        prev = h
    return widths


def param_manifest(config: ModelConfig) -> list[tuple[str, tuple, tuple]]:
    """(name, shape, init) for every parameter, in canonical creation order.

    init is ("uniform", fan_in), ("zeros",) or ("lstm_bias", hidden_dim).
    """
    out = []
    for i, (x, h) in enumerate(_encoder_widths(config)):
        out.append((f"enc.{i}.W", (4 * h, x + h), ("uniform", x + h)))
        out.append((f"enc.{i}.b", (4 * h,), ("lstm_bias", h)))
    if config.conditioning.cat_encoder and config.cat:
        ch = config.cat.cluster_hidden
        src_h = config.encoder[config.cat.source_layer - 1]
        tgt_h = config.encoder[config.cat.target_layer - 1]
        for c in range(config.cat.num_clusters):
            out.append((f"cat.{c}.W", (4 * ch, src_h + ch), ("uniform", src_h + ch)))
            out.append((f"cat.{c}.b", (4 * ch,), ("lstm_bias", ch)))
            out.append((f"cat.{c}.P", (tgt_h, ch), ("uniform", ch)))
    enc_top = config.encoder[-1]
    dec0 = config.decoder[0]
    out.append(("att.W_h", (config.attention_dim, enc_top), ("uniform", enc_top)))
    out.append(("att.W_s", (config.attention_dim, dec0), ("uniform", dec0)))
    out.append(("att.b", (config.attention_dim,), ("zeros",)))
    out.append(("att.v", (config.attention_dim,), ("uniform", config.attention_dim)))
    out.append(("emb.E", (len(config.vocab), config.embed_dim), ("uniform", config.embed_dim)))
    for j, (x, h) in enumerate(_decoder_widths(config)):
        out.append((f"dec.{j}.W", (4 * h, x + h), ("uniform", x + h)))
        out.append((f"dec.{j}.b", (4 * h,), ("lstm_bias", h)))
    vec = config.vector_dim if config.conditioning.decoder_vector else 0
    out_in = config.decoder[-1] + vec
    out.append(("out.W", (len(config.vocab), out_in), ("uniform", out_in)))
    out.append(("out.b", (len(config.vocab),), ("zeros",)))
    if config.conditioning.needs_vector and config.conditioning.vector_kind == "embedding":
        out.append(
            ("dvec.E", (len(config.inventory), config.vector_dim), ("uniform", config.vector_dim))
        )
    return out


def count_parameters(config: ModelConfig) -> int:
    """Parameter count implied by the config, without allocating arrays."""
    total = 0
    for _, shape, _ in param_manifest(config):
        n = 1
        for d in shape:
            n *= d
        total += n
    return total


def dialect_input_column_ranges(config: ModelConfig) -> dict[str, tuple[int, int]]:
    """Column range of the appended dialect slots inside each weight matrix.

    Zeroing these columns makes the model provably ignore the dialect
    vector; used by neutrality tests and analyses.
    """
    ranges = {}
    vec = config.vector_dim
    if config.conditioning.encoder_vector:
        prev = config.input_dim
        for i, h in enumerate(config.encoder):
            ranges[f"enc.{i}.W"] = (prev, prev + vec)
            prev = h
    if config.conditioning.decoder_vector:
        prev = config.embed_dim + config.encoder[-1]
        for j, h in enumerate(config.decoder):
            ranges[f"dec.{j}.W"] = (prev, prev + vec)
            prev = h
        ranges["out.W"] = (config.decoder[-1], config.decoder[-1] + vec)
    return ranges


# ---------------------------------------------------------------------------
# results


@dataclass
class DecodeResult:
    token_ids: list[int]
    truncated: bool


@dataclass
class BeamHypothesis:
    token_ids: list[int]
    score: float  # total log prob / decode steps
    log_prob: float
    truncated: bool


class DecoderState:
    """Per-layer (h, c) pairs; the lowest layer's h drives the next attention."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = layers


class LasModel:
    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params
        self._bind()

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, precision: Precision | str = "float32"):
        config.validate()
        precision = Precision(precision) if isinstance(precision, str) else precision
        rng = np.random.default_rng(seed)
        params: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape, init in param_manifest(config):
            if init[0] == "uniform":
                arr = rng.uniform(-1.0 / np.sqrt(init[1]), 1.0 / np.sqrt(init[1]), size=shape)
            elif init[0] == "lstm_bias":
                arr = np.zeros(shape)
                arr[init[1] : 2 * init[1]] = 1.0
            else:
                arr = np.zeros(shape)
            params[name] = Tensor(arr.astype(precision.dtype), requires_grad=True)
        return cls(config, params)

    def _bind(self):
        cfg = self.config
        p = self.params
        self.enc_layers = [
            LstmParams(p[f"enc.{i}.W"], p[f"enc.{i}.b"], x, h)
            for i, (x, h) in enumerate(_encoder_widths(cfg))
        ]
        self.dec_layers = [
            LstmParams(p[f"dec.{j}.W"], p[f"dec.{j}.b"], x, h)
            for j, (x, h) in enumerate(_decoder_widths(cfg))
        ]
        self.attention = AttentionParams(p["att.W_h"], p["att.W_s"], p["att.b"], p["att.v"])
        self.embedding = EmbeddingParams(p["emb.E"])
        self.out_w = p["out.W"]
        self.out_b = p["out.b"]
        if cfg.conditioning.cat_encoder and cfg.cat:
            ch = cfg.cat.cluster_hidden
            src_h = cfg.encoder[cfg.cat.source_layer - 1]
            self.cat_clusters = [
                (LstmParams(p[f"cat.{c}.W"], p[f"cat.{c}.b"], src_h, ch), p[f"cat.{c}.P"])
                for c in range(cfg.cat.num_clusters)
            ]
        else:
            self.cat_clusters = []

    @property
    def dtype(self):
        return self.params["out.W"].data.dtype

    @property
    def vocab(self) -> GraphemeVocab:
        return self.config.vocab

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def clone(self) -> "LasModel":
        params = OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items()
        )
        return LasModel(self.config, params)

    # -- dialect plumbing ---------------------------------------------------

    def dialect_vec(self, dialect_id: int | None) -> Tensor | None:
        cfg = self.config
        if not cfg.conditioning.needs_vector:
            return None
        if dialect_id is None:
            raise ContractError(
                f"conditioning mode of {cfg.system or 'this model'} needs a dialect id"
            )
        table = self.params.get("dvec.E")
        return dialect_vector(
            dialect_id, cfg.conditioning.vector_kind, cfg.inventory, table, self.dtype
        )

    # -- encoder ------------------------------------------------------------

    def encode(self, features, dialect: Tensor | None = None) -> Tensor:
        """Encoder output [T, H_top] for stacked features [T, input_dim]."""
        cfg = self.config
        feats = T.as_tensor(features, dtype=self.dtype)
        if feats.data.ndim != 2 or feats.data.shape[1] != cfg.input_dim:
            raise ShapeError(
                f"features shape {feats.data.shape} does not match input_dim {cfg.input_dim}"
            )
        if (cfg.conditioning.encoder_vector or cfg.conditioning.cat_encoder) and dialect is None:
            raise ContractError("this conditioning mode requires a dialect vector for encoding")
        append = dialect if cfg.conditioning.encoder_vector else None

        per_layer: list[Tensor] = []
        current = feats
        for li, lp in enumerate(self.enc_layers):
            current = lstm_layer_sequence(current, lp, append)
            per_layer.append(current)
            if self.cat_clusters and li == cfg.cat.target_layer - 1:
                o_src = per_layer[cfg.cat.source_layer - 1]
                weights = T.slice0(dialect, 0, cfg.cat.num_clusters)
                current = self.cat_combine(o_src, current, weights)
        return current

    def cat_combine(self, o_src: Tensor, o_tgt: Tensor, weights: Tensor) -> Tensor:
        """Add the weighted cluster offsets to the target layer's outputs.

        Each cluster runs its own LSTM over the source-layer sequence and
        projects to the target width (no bias); clusters whose constant
        weight is exactly zero are skipped, so zero weights return
        ``o_tgt`` unchanged.
        """
        if weights.data.shape != (len(self.cat_clusters),):
            raise ShapeError(
                f"cat weights shape {weights.data.shape} != ({len(self.cat_clusters)},)"
            )
        total = None
        for c, (lp, proj) in enumerate(self.cat_clusters):
            w_c = T.row(weights, c)
            if not weights.requires_grad and float(w_c.data) == 0.0:
                continue
            cluster_seq = lstm_layer_sequence(o_src, lp)
            projected = T.matmul(cluster_seq, _transpose2(proj))
            term = T.mul(projected, w_c)
            total = term if total is None else T.add(total, term)
        if total is None:
            return o_tgt
        return T.add(o_tgt, total)

    # -- decoder ------------------------------------------------------------

    def initial_state(self) -> DecoderState:
        return DecoderState(
            [
                (
                    Tensor(np.zeros(h, dtype=self.dtype)),
                    Tensor(np.zeros(h, dtype=self.dtype)),
                )
                for h in self.config.decoder
            ]
        )

    def decode_step(
        self,
        prev_token_id: int,
        prev_state: DecoderState,
        enc_out: Tensor,
        dialect: Tensor | None = None,
        enc_proj: Tensor | None = None,
    ):
        """One decoder step. Returns (logits [V], new state, attention weights).

        Attention conditions on the lowest decoder layer's state from the
        previous step; the dialect vector, when decoder-injected, is
        appended to every decoder layer input and to the logit layer input.
        """
        cfg = self.config
        if not 0 <= prev_token_id < len(cfg.vocab):
            raise IndexError(
                f"token id {prev_token_id} outside vocabulary of size {len(cfg.vocab)}"
            )
        inject = dialect if cfg.conditioning.decoder_vector else None
        if cfg.conditioning.decoder_vector and dialect is None:
            raise ContractError("this conditioning mode requires a dialect vector for decoding")
        if enc_proj is None:
            enc_proj = attention_enc_proj(enc_out, self.attention)
        alpha, context = fused_attention(
            prev_state.layers[0][0], enc_out, self.attention, enc_proj
        )
        x = T.concat([embed(prev_token_id, self.embedding), context])
        logits, new_state = self._decoder_tower_step(x, inject, prev_state)
        return logits, new_state, alpha

    def _decoder_tower_step(self, x: Tensor, inject: Tensor | None, prev_state: DecoderState):
        """All decoder layers plus the output projection as one graph node.

        Equivalent to chaining lstm_cell_step per layer with the dialect
        vector concatenated to each layer input and to the logit input;
        fused to keep the per-step graph small.
        """
        from .layers import cell_backward, cell_forward

        layers = self.dec_layers
        inj = inject.data if inject is not None else None
        caches = []
        xs = x.data
        for (h_prev, c_prev), lp in zip(prev_state.layers, layers):
            xh_parts = [xs] if inj is None else [xs, inj]
            xh = np.concatenate(xh_parts + [h_prev.data])
            h, c, gates, tc = cell_forward(xh, c_prev.data, lp.W.data, lp.b.data, lp.hidden_dim)
            caches.append((xh, c_prev.data, gates, tc, h, c))
            xs = h
        top = xs if inj is None else np.concatenate([xs, inj])
        logits = self.out_w.data @ top + self.out_b.data

        x_width = x.data.shape[0]
        vec = 0 if inj is None else inj.shape[0]

        def bwd(grads):
            glogits = grads[0]
            state_grads = grads[1:]
            n = len(layers)
            ginj = np.zeros(vec, dtype=top.dtype) if inj is not None else None
            gw_out = gb_out = None
            if glogits is not None:
                dtop = self.out_w.data.T @ glogits
                gw_out = glogits[:, None] * top[None, :]
                gb_out = glogits
                dh = dtop[: layers[-1].hidden_dim]
                if inj is not None:
                    ginj += dtop[layers[-1].hidden_dim :]
            else:
                dh = None
            res_x = None
            layer_grads = []
            for li in range(n - 1, -1, -1):
                xh, c_prev, gates, tc, _, _ = caches[li]
                lp = layers[li]
                gh_out = state_grads[2 * li]
                gc_out = state_grads[2 * li + 1]
                dh_total = dh
                if gh_out is not None:
                    dh_total = gh_out if dh_total is None else dh_total + gh_out
                dxh, dc_prev, dw, db = cell_backward(
                    dh_total, gc_out, xh, c_prev, gates, tc, lp.W.data, lp.hidden_dim
                )
                in_width = xh.shape[0] - lp.hidden_dim
                layer_grads.append((dxh[in_width:], dc_prev, dw, db))
                base = in_width - vec
                if inj is not None:
                    ginj += dxh[base:in_width]
                if li == 0:
                    res_x = dxh[:base]
                else:
                    dh = dxh[:base]
            layer_grads.reverse()
            # input order: x, [inject], h0, c0, h1, c1, ..., W0, b0, ..., out.W, out.b
            out: list = [res_x]
            if inj is not None:
                out.append(ginj)
            for gh_prev, gc_prev, _, _ in layer_grads:
                out.extend([gh_prev, gc_prev])
            for _, _, dw, db in layer_grads:
                out.extend([dw, db])
            out.extend([gw_out, gb_out])
            return out

        inputs: list[Tensor] = [x]
        if inject is not None:
            inputs.append(inject)
        for h_prev, c_prev in prev_state.layers:
            inputs.extend([h_prev, c_prev])
        for lp in layers:
            inputs.extend([lp.W, lp.b])
        inputs.extend([self.out_w, self.out_b])
        out_arrays = [logits]
        for _, _, _, _, h, c in caches:
            out_arrays.extend([h, c])
        results = T.apply_op(inputs, out_arrays, bwd)
        logits_t = results[0]
        new_layers = [(results[1 + 2 * i], results[2 + 2 * i]) for i in range(len(layers))]
        return logits_t, DecoderState(new_layers)

    # -- training loss ------------------------------------------------------

    def targets_for(self, transcript: str, dialect_id: int) -> list[int]:
        from .dialects import augment_targets

        mode = self.config.conditioning.output_token
        token = self.config.inventory.dialects[dialect_id].token if mode != "none" else None
        return augment_targets(transcript, self.vocab, token, mode)

    def teacher_forced_loss(
        self,
        features,
        transcript: str,
        dialect_id: int | None,
        target_ids=None,
        target_mask=None,
    ) -> Tensor:
        """Mean cross entropy over the steps predicting tokens after <sos>.

        ``target_ids``/``target_mask`` may carry a padded target row from a
        batch; the mask then determines how many steps actually run.
        """
        if target_ids is None:
            if not transcript:
                raise DataError("empty transcript")
            target_ids = self.targets_for(transcript, dialect_id)
            n_tokens = len(target_ids)
        else:
            target_ids = list(target_ids)
            if target_mask is not None:
                n_tokens = 1 + int(np.asarray(target_mask, dtype=bool).sum())
            else:
                n_tokens = len(target_ids)
            if n_tokens < 2:
                raise DataError("empty target sequence")
        dialect = self.dialect_vec(dialect_id) if self.config.conditioning.needs_vector else None
        enc_out = self.encode(features, dialect)
        enc_proj = attention_enc_proj(enc_out, self.attention)
        state = self.initial_state()
        step_logits = []
        for k in range(n_tokens - 1):
            logits, state, _ = self.decode_step(
                target_ids[k], state, enc_out, dialect, enc_proj
            )
            step_logits.append(logits)
        return T.cross_entropy(T.stack(step_logits), target_ids[1:n_tokens])

    # -- inference ----------------------------------------------------------

    def default_max_len(self, enc_frames: int) -> int:
        return 2 * enc_frames + 10

    def greedy_decode(
        self, features, dialect_id: int | None = None, max_len: int | None = None
    ) -> DecodeResult:
        """Argmax decoding until <eos> (ties go to the lowest token id)."""
        with T.no_grad():
            dialect = self.dialect_vec(dialect_id) if self.config.conditioning.needs_vector else None
            enc_out = self.encode(features, dialect)
            if max_len is None:
                max_len = self.default_max_len(enc_out.data.shape[0])
            if max_len < 1:
                raise ValueError("max_len must be >= 1")
            enc_proj = attention_enc_proj(enc_out, self.attention)
            state = self.initial_state()
            prev = self.vocab.sos_id
            tokens: list[int] = []
            for _ in range(max_len):
                logits, state, _ = self.decode_step(prev, state, enc_out, dialect, enc_proj)
                tid = int(np.argmax(logits.data))
                if tid == self.vocab.eos_id:
                    return DecodeResult(tokens, truncated=False)
                tokens.append(tid)
                prev = tid
            return DecodeResult(tokens, truncated=True)

    def beam_decode(
        self,
        features,
        dialect_id: int | None = None,
        beam_width: int = 4,
        max_len: int | None = None,
    ) -> list[BeamHypothesis]:
        """Beam search ranked by length-normalized log probability."""
        if beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        with T.no_grad():
            dialect = self.dialect_vec(dialect_id) if self.config.conditioning.needs_vector else None
            enc_out = self.encode(features, dialect)
            if max_len is None:
                max_len = self.default_max_len(enc_out.data.shape[0])
            enc_proj = attention_enc_proj(enc_out, self.attention)
            eos = self.vocab.eos_id
            # hyp: (tokens, logp, state)
            active = [([self.vocab.sos_id], 0.0, self.initial_state())]
            done: list[BeamHypothesis] = []
            for step in range(max_len):
                candidates = []
                for tokens, logp, state in active:
                    logits, new_state, _ = self.decode_step(
                        tokens[-1], state, enc_out, dialect, enc_proj
                    )
                    ld = logits.data.astype(np.float64)
                    logprobs = ld - _logsumexp(ld)
                    order = np.argsort(-logprobs, kind="stable")[:beam_width]
                    for tid in order:
                        candidates.append(
                            (logp + float(logprobs[tid]), int(tid), tokens, new_state)
                        )
                # all candidates at this step share a length, so pruning by
                # raw log prob matches pruning by normalized score
                candidates.sort(key=lambda cnd: (-cnd[0], cnd[1]))
                active = []
                for cand_logp, tid, tokens, state in candidates[:beam_width]:
                    steps_taken = len(tokens)  # tokens includes <sos>
                    if tid == eos:
                        done.append(
                            BeamHypothesis(
                                token_ids=tokens[1:],
                                score=cand_logp / steps_taken,
                                log_prob=cand_logp,
                                truncated=False,
                            )
                        )
                    else:
                        active.append((tokens + [tid], cand_logp, state))
                if not active:
                    break
            for tokens, logp, _ in active:
                done.append(
                    BeamHypothesis(
                        token_ids=tokens[1:],
                        score=logp / max(len(tokens) - 1, 1),
                        log_prob=logp,
                        truncated=True,
                    )
                )
            done.sort(key=lambda h: (-h.score, tuple(h.token_ids)))
            return done[:beam_width]


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def _transpose2(a: Tensor) -> Tensor:
    def bwd(gs):
        g = gs[0]
        return (None,) if g is None else (g.T.copy(),)

    (out,) = T.apply_op([a], [a.data.T.copy()], bwd)
    return out


# ---------------------------------------------------------------------------
# checkpoints: model.json (config + manifest + state) and model.bin (float32)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"  # float32 arrays
    opt_state: dict
    wer_history: list

    @classmethod
    def from_model(cls, model: LasModel, opt_state: dict | None = None, wer_history=None):
        params = OrderedDict(
            (k, np.ascontiguousarray(v.data, dtype="<f4")) for k, v in model.params.items()
        )
        return cls(model.config, params, opt_state or {"step": 0, "learning_rate": 0.0},
                   list(wer_history or []))

    def to_model(self, precision: Precision | str = "float32") -> LasModel:
        precision = Precision(precision) if isinstance(precision, str) else precision
        params = OrderedDict(
            (k, Tensor(v.astype(precision.dtype), requires_grad=True))
            for k, v in self.params.items()
        )
        return LasModel(self.config, params)


def save_checkpoint(ckpt: Checkpoint, directory) -> None:
    import os

    os.makedirs(directory, exist_ok=True)
    manifest = []
    offset = 0
    blobs = []
    for name, arr in ckpt.params.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    meta = {
        "config": ckpt.config.to_json(),
        "manifest": manifest,
        "opt_state": ckpt.opt_state,
        "wer_history": ckpt.wer_history,
    }
    with open(os.path.join(directory, "model.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    with open(os.path.join(directory, "model.bin"), "wb") as f:
        for raw in blobs:
            f.write(raw)


def load_checkpoint(directory) -> Checkpoint:
    import os

    with open(os.path.join(directory, "model.json")) as f:
        meta = json.load(f)
    config = ModelConfig.from_json(meta["config"])
    with open(os.path.join(directory, "model.bin"), "rb") as f:
        blob = f.read()
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in meta["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
        params[entry["name"]] = arr.copy()
    return Checkpoint(config, params, meta["opt_state"], meta["wer_history"])
