"""Neural building blocks: LSTM cell and stack, additive attention, embeddings.

The LSTM ops run as fused graph nodes with hand-derived backward passes
(a per-gate graph would dominate runtime at this scale). A whole layer
over time is one node: all input projections batch into a single matmul
and backpropagation through time loops only over the recurrent part.
The fused adjoints are validated against finite differences and against
the composed elementary ops in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class LstmParams:
    """Gate weights stacked as rows (i, f, g, o), inputs before hidden columns."""

    W: Tensor  # [4H, X+H]
    b: Tensor  # [4H]
    input_dim: int
    hidden_dim: int


@dataclass
class AttentionParams:
    W_h: Tensor  # [A, H_enc] encoder projection
    W_s: Tensor  # [A, H_dec] decoder state projection
    b: Tensor  # [A]
    v: Tensor  # [A] scoring vector


@dataclass
class EmbeddingParams:
    E: Tensor  # [V, K]


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape).astype(dtype)


def init_lstm(input_dim: int, hidden_dim: int, rng: np.random.Generator, dtype=np.float64) -> LstmParams:
    w = uniform_init(rng, (4 * hidden_dim, input_dim + hidden_dim), input_dim + hidden_dim, dtype)
    b = np.zeros(4 * hidden_dim, dtype=dtype)
    b[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate bias keeps early memory open
    return LstmParams(
        W=Tensor(w, requires_grad=True),
        b=Tensor(b, requires_grad=True),
        input_dim=input_dim,
        hidden_dim=hidden_dim,
    )


def init_attention(
    enc_dim: int, dec_dim: int, attn_dim: int, rng: np.random.Generator, dtype=np.float64
) -> AttentionParams:
    return AttentionParams(
        W_h=Tensor(uniform_init(rng, (attn_dim, enc_dim), enc_dim, dtype), requires_grad=True),
        W_s=Tensor(uniform_init(rng, (attn_dim, dec_dim), dec_dim, dtype), requires_grad=True),
        b=Tensor(np.zeros(attn_dim, dtype=dtype), requires_grad=True),
        v=Tensor(uniform_init(rng, (attn_dim,), attn_dim, dtype), requires_grad=True),
    )


def init_embedding(vocab_size: int, dim: int, rng: np.random.Generator, dtype=np.float64) -> EmbeddingParams:
    return EmbeddingParams(
        E=Tensor(uniform_init(rng, (vocab_size, dim), dim, dtype), requires_grad=True)
    )


def _gates(z: np.ndarray, hdim: int) -> np.ndarray:
    g = z.copy()
    g[..., : 2 * hdim] = 1.0 / (1.0 + np.exp(-z[..., : 2 * hdim]))
    g[..., 2 * hdim : 3 * hdim] = np.tanh(z[..., 2 * hdim : 3 * hdim])
    g[..., 3 * hdim :] = 1.0 / (1.0 + np.exp(-z[..., 3 * hdim :]))
    return g


def _gate_backward(dc, do, gates, c_prev, hdim: int, out: np.ndarray):
    """dz for one step given dc/do and the saved gate activations."""
    i = gates[:hdim]
    f = gates[hdim : 2 * hdim]
    g = gates[2 * hdim : 3 * hdim]
    o = gates[3 * hdim :]
    out[:hdim] = (dc * g) * i * (1.0 - i)
    out[hdim : 2 * hdim] = (dc * c_prev) * f * (1.0 - f)
    out[2 * hdim : 3 * hdim] = (dc * i) * (1.0 - g * g)
    out[3 * hdim :] = do * o * (1.0 - o)


def cell_forward(xh: np.ndarray, c_prev: np.ndarray, wd: np.ndarray, bd: np.ndarray, hdim: int):
    """Raw LSTM cell arithmetic; returns (h, c, gates, tanh_c) for reuse."""
    gates = _gates(wd @ xh + bd, hdim)
    c = gates[hdim : 2 * hdim] * c_prev + gates[:hdim] * gates[2 * hdim : 3 * hdim]
    tc = np.tanh(c)
    h = gates[3 * hdim :] * tc
    return h, c, gates, tc


def cell_backward(dh, dc_out, xh, c_prev, gates, tc, wd, hdim: int):
    """Adjoints of one cell step; returns (dxh, dc_prev, dW, db)."""
    o = gates[3 * hdim :]
    if dc_out is None:
        dc = np.zeros(hdim, dtype=gates.dtype)
    else:
        dc = dc_out.copy()
    if dh is not None:
        dc += dh * o * (1.0 - tc * tc)
        do = dh * tc
    else:
        do = np.zeros(hdim, dtype=gates.dtype)
    dz = np.empty(4 * hdim, dtype=gates.dtype)
    _gate_backward(dc, do, gates, c_prev, hdim, dz)
    dxh = wd.T @ dz
    dc_prev = dc * gates[hdim : 2 * hdim]
    dw = dz[:, None] * xh[None, :]
    return dxh, dc_prev, dw, dz


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    """One LSTM step. Returns (h, c).

    i, f, o = sigmoid(gate rows . [x; h_prev] + b), g = tanh(.);
    c = f*c_prev + i*g; h = o*tanh(c). No peepholes, no projection.
    """
    hdim = p.hidden_dim
    if x.data.shape != (p.input_dim,):
        raise ShapeError(f"lstm input shape {x.data.shape} != ({p.input_dim},)")
    if h_prev.data.shape != (hdim,) or c_prev.data.shape != (hdim,):
        raise ShapeError(
            f"lstm state shapes {h_prev.data.shape}/{c_prev.data.shape} != ({hdim},)"
        )

    wd, bd = p.W.data, p.b.data
    xh = np.concatenate([x.data, h_prev.data])
    h, c, gates, tc = cell_forward(xh, c_prev.data, wd, bd, hdim)

    def bwd(grads):
        gh, gc = grads
        dxh, dc_prev, dw, dz = cell_backward(gh, gc, xh, c_prev.data, gates, tc, wd, hdim)
        return dxh[: p.input_dim], dxh[p.input_dim :], dc_prev, dw, dz

    h_t, c_t = T.apply_op([x, h_prev, c_prev, p.W, p.b], [h, c], bwd)
    return h_t, c_t


def lstm_layer_sequence(x_seq: Tensor, p: LstmParams, append: Tensor | None = None) -> Tensor:
    """Run one LSTM layer over a whole [T, X] sequence as a single graph node.

    ``append`` is concatenated to the input at every step. Initial h and c
    are zero. Input projections for all steps run as one matmul; the
    backward pass loops in reverse only for the recurrent terms and folds
    the weight gradient into a single matmul as well.
    """
    hdim = p.hidden_dim
    if x_seq.data.ndim != 2:
        raise ShapeError(f"expected [T, X] inputs, got shape {x_seq.data.shape}")
    t_steps, x_width = x_seq.data.shape
    vec = 0 if append is None else append.data.shape[0]
    if x_width + vec != p.input_dim:
        raise ShapeError(f"layer expects input width {p.input_dim}, got {x_width + vec}")

    wd, bd = p.W.data, p.b.data
    w_x = wd[:, : p.input_dim]
    w_h = wd[:, p.input_dim :]
    if append is None:
        xs = x_seq.data
    else:
        xs = np.concatenate(
            [x_seq.data, np.tile(append.data, (t_steps, 1))], axis=1
        )
    zx = xs @ w_x.T + bd  # [T, 4H]
    gates = np.empty((t_steps, 4 * hdim), dtype=xs.dtype)
    cs = np.empty((t_steps, hdim), dtype=xs.dtype)
    tcs = np.empty((t_steps, hdim), dtype=xs.dtype)
    hs = np.empty((t_steps, hdim), dtype=xs.dtype)
    h = np.zeros(hdim, dtype=xs.dtype)
    c = np.zeros(hdim, dtype=xs.dtype)
    for t in range(t_steps):
        g = _gates(zx[t] + w_h @ h, hdim)
        gates[t] = g
        c = g[hdim : 2 * hdim] * c + g[:hdim] * g[2 * hdim : 3 * hdim]
        cs[t] = c
        tc = np.tanh(c)
        tcs[t] = tc
        h = g[3 * hdim :] * tc
        hs[t] = h

    def bwd(grads):
        gh_seq = grads[0]
        w_hT = w_h.T.copy()
        dz_all = np.empty_like(gates)
        dh_next = np.zeros(hdim, dtype=xs.dtype)
        dc_next = np.zeros(hdim, dtype=xs.dtype)
        dz = np.empty(4 * hdim, dtype=xs.dtype)
        for t in range(t_steps - 1, -1, -1):
            g = gates[t]
            o = g[3 * hdim :]
            gh = dh_next if gh_seq is None else gh_seq[t] + dh_next
            tc = tcs[t]
            dc = dc_next + gh * o * (1.0 - tc * tc)
            do = gh * tc
            c_prev = cs[t - 1] if t > 0 else np.zeros(hdim, dtype=xs.dtype)
            _gate_backward(dc, do, g, c_prev, hdim, dz)
            dz_all[t] = dz
            dh_next = w_hT @ dz
            dc_next = dc * g[hdim : 2 * hdim]
        gx = gapp = gw = gb = None
        if x_seq.requires_grad or (append is not None and append.requires_grad):
            dx_full = dz_all @ w_x
            if x_seq.requires_grad:
                gx = dx_full[:, :x_width]
            if append is not None and append.requires_grad:
                gapp = dx_full[:, x_width:].sum(axis=0)
        if p.W.requires_grad:
            h_prev_rows = np.vstack([np.zeros((1, hdim), dtype=xs.dtype), hs[:-1]])
            gw = dz_all.T @ np.concatenate([xs, h_prev_rows], axis=1)
        if p.b.requires_grad:
            gb = dz_all.sum(axis=0)
        return gx, gapp, gw, gb

    inputs = [x_seq, append, p.W, p.b] if append is not None else [x_seq, p.W, p.b]

    def bwd_no_append(grads):
        gx, _, gw, gb = bwd(grads)
        return gx, gw, gb

    if append is not None:
        (out,) = T.apply_op(inputs, [hs], bwd)
    else:
        (out,) = T.apply_op(inputs, [hs], bwd_no_append)
    return out


def lstm_stack_forward(
    inputs,
    layers: list[LstmParams],
    per_layer_append: Tensor | None = None,
    return_layer_outputs: bool = False,
):
    """Run a unidirectional LSTM stack over a [T, X] sequence.

    ``per_layer_append`` is concatenated to every layer's input at every
    time step (the conditioning-vector hook). Initial h and c are zero.
    Returns the top layer's [T, H_top] sequence; with
    ``return_layer_outputs`` also every layer's [T, H] output.
    """
    current = T.as_tensor(inputs)
    if current.data.ndim != 2 or current.data.shape[0] < 1:
        raise ShapeError(f"expected nonempty [T, X] inputs, got {current.data.shape}")
    per_layer = []
    for li, p in enumerate(layers):
        vec = per_layer_append.data.shape[0] if per_layer_append is not None else 0
        if current.data.shape[1] + vec != p.input_dim:
            raise ShapeError(
                f"layer {li} expects input width {p.input_dim}, "
                f"got {current.data.shape[1] + vec}"
            )
        current = lstm_layer_sequence(current, p, per_layer_append)
        per_layer.append(current)
    if return_layer_outputs:
        return current, per_layer
    return current


def additive_attention(
    s: Tensor,
    enc_out: Tensor,
    p: AttentionParams,
    enc_mask=None,
    enc_proj: Tensor | None = None,
):
    """Score every encoder frame against decoder state ``s``.

    e_u = v . tanh(W_h h_u + W_s s + b); alpha = softmax over unmasked
    frames (masked frames get weight exactly 0); context = sum alpha_u h_u.
    ``enc_proj`` may carry the precomputed enc_out @ W_h^T to share across
    decode steps.
    """
    if enc_out.data.ndim != 2 or enc_out.data.shape[0] < 1:
        raise ShapeError(f"encoder output must be [U, H], got {enc_out.data.shape}")
    u_frames = enc_out.data.shape[0]
    if enc_mask is not None:
        m = np.asarray(enc_mask, dtype=bool)
        if m.shape != (u_frames,):
            raise ShapeError(f"encoder mask length {m.shape} != {u_frames}")
        if not m.any():
            raise ContractError("attention needs at least one unmasked encoder frame")
    else:
        m = None

    if enc_proj is None:
        enc_proj = attention_enc_proj(enc_out, p)
    q = T.add(T.matmul(p.W_s, s), p.b)
    scores = T.matmul(T.tanh(T.add_rowvec(enc_proj, q)), p.v)
    if m is not None and not m.all():
        penalty = np.zeros(u_frames, dtype=enc_out.data.dtype)
        penalty[~m] = -1e30  # exp underflows to exactly 0 for masked frames
        scores = T.add(scores, Tensor(penalty))
    alpha = T.softmax(scores)
    context = T.matmul(alpha, enc_out)
    return alpha, context


def fused_attention(s: Tensor, enc_out: Tensor, p: AttentionParams, enc_proj: Tensor):
    """Unmasked additive attention as one graph node (the decoder hot path).

    Mathematically identical to ``additive_attention`` without a mask;
    equality of values and gradients is pinned in the tests.
    """
    sd = s.data
    z = np.tanh(enc_proj.data + (p.W_s.data @ sd + p.b.data))
    e = z @ p.v.data
    e = e - e.max()
    alpha = np.exp(e)
    alpha /= alpha.sum()
    ctx = alpha @ enc_out.data

    def bwd(grads):
        g_alpha, g_ctx = grads
        dalpha = np.zeros_like(alpha) if g_alpha is None else g_alpha.copy()
        if g_ctx is not None:
            dalpha += enc_out.data @ g_ctx
        de = alpha * (dalpha - float(dalpha @ alpha))
        dz = (de[:, None] * p.v.data[None, :]) * (1.0 - z * z)
        dq = dz.sum(axis=0)
        gs = genc = gproj = gws = gb = gv = None
        if s.requires_grad:
            gs = p.W_s.data.T @ dq
        if enc_out.requires_grad and g_ctx is not None:
            genc = alpha[:, None] * g_ctx[None, :]
        if enc_proj.requires_grad:
            gproj = dz
        if p.W_s.requires_grad:
            gws = dq[:, None] * sd[None, :]
        if p.b.requires_grad:
            gb = dq
        if p.v.requires_grad:
            gv = z.T @ de
        return gs, genc, gproj, gws, gb, gv

    alpha_t, ctx_t = T.apply_op(
        [s, enc_out, enc_proj, p.W_s, p.b, p.v], [alpha, ctx], bwd
    )
    return alpha_t, ctx_t


def attention_enc_proj(enc_out: Tensor, p: AttentionParams) -> Tensor:
    """enc_out @ W_h^T, computed once per utterance and reused per step."""
    return T.matmul(enc_out, _transpose(p.W_h))


def _transpose(a: Tensor) -> Tensor:
    def bwd(gs):
        g = gs[0]
        return (None,) if g is None else (g.T.copy(),)

    (out,) = T.apply_op([a], [a.data.T.copy()], bwd)
    return out


def embed(token_id: int, p: EmbeddingParams) -> Tensor:
    """Row lookup; the gradient accumulates only into the selected row."""
    v = p.E.data.shape[0]
    if not 0 <= token_id < v:
        raise IndexError(f"token id {token_id} outside embedding table of size {v}")
    return T.row(p.E, token_id)
