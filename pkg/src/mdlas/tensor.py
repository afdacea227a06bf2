"""Dense tensors with reverse-mode automatic differentiation.

A small define-by-run engine. Every operation that touches a tensor with
``requires_grad`` links its outputs to a graph node holding a backward
closure; ``backward`` on a scalar loss replays the reachable nodes in
reverse topological order. The op set is only what an LSTM attention
stack needs: matmul, same-shape arithmetic (plus scalars), sigmoid/tanh,
concat/stack/row/slice/reshape, softmax and masked cross entropy.

Shapes are strict by design: there is no broadcasting other than
scalar-times-tensor, so a mismatched shape raises instead of silently
broadcasting.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, PrecisionError, ShapeError

_DTYPES = {"float64": np.float64, "float32": np.float32}


class Precision:
    """Float mode for a set of parameters. Gradient checking needs float64."""

    __slots__ = ("mode",)

    def __init__(self, mode: str = "float64"):
        if mode not in _DTYPES:
            raise ValueError(f"unknown precision mode {mode!r}, expected float64 or float32")
        self.mode = mode

    @property
    def dtype(self):
        return _DTYPES[self.mode]

    def __eq__(self, other):
        return isinstance(other, Precision) and other.mode == self.mode

    def __repr__(self):
        return f"Precision({self.mode!r})"


class _GradState(threading.local):
    grad_enabled = True  # class attribute doubles as the per-thread default


_state = _GradState()


def grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad():
    """Disable graph recording in this thread (inference / numeric probes)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One executed operation: input tensors, output tensors, adjoint closure.

    ``backward`` receives one gradient array (or None) per output and returns
    one gradient array (or None) per input. Returned arrays must be safe for
    the caller to keep; they are never mutated in place afterwards.
    """

    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "index")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if type(data) is np.ndarray and dtype is None:
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.index = 0

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{what} contains NaN or Inf values")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_same_dtype(a: Tensor, b: Tensor):
    if a.data.dtype != b.data.dtype:
        raise PrecisionError(
            f"mixed dtypes {a.data.dtype.name} and {b.data.dtype.name}; cast explicitly"
        )


def _register(inputs: Sequence[Tensor], outputs: Sequence[Tensor], backward_fn):
    node = Node(tuple(inputs), tuple(outputs), backward_fn)
    for i, t in enumerate(outputs):
        t.node = node
        t.index = i


def apply_op(
    inputs: Sequence[Tensor],
    out_arrays: Sequence[np.ndarray],
    backward_fn: Callable[[Sequence[np.ndarray | None]], Sequence[np.ndarray | None]],
) -> tuple[Tensor, ...]:
    """Create output tensors for a (possibly fused) op and record the node.

    Used by layers that implement a hand-derived backward pass as a single
    graph node instead of composing elementary ops.
    """
    needs = False
    if _state.grad_enabled:
        for t in inputs:
            if t.requires_grad:
                needs = True
                break
    outs = tuple(Tensor(a, requires_grad=needs) for a in out_arrays)
    if needs:
        _register(inputs, outs, backward_fn)
    return outs


class ComputeGraph:
    """Topologically ordered record of the nodes reaching one output tensor.

    Built on demand from the links each operation leaves behind; replaying
    ``nodes`` in reverse propagates adjoints to every reachable tensor.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputeGraph":
        root = out.node
        if root is None:
            return cls([])
        order: list[Node] = []
        done: set[int] = set()
        expanded: set[int] = set()
        stack = [root]
        while stack:
            node = stack[-1]
            nid = id(node)
            if nid not in expanded:
                expanded.add(nid)
                for t in node.inputs:
                    p = t.node
                    if p is not None and t.requires_grad and id(p) not in done:
                        stack.append(p)
            else:
                stack.pop()
                if nid not in done:
                    done.add(nid)
                    order.append(node)
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor):
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss does not require grad; nothing to backpropagate")
    graph = ComputeGraph.from_output(loss)
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(graph.nodes):
        out_grads = [t.grad for t in node.outputs]
        if all(g is None for g in out_grads):
            continue
        in_grads = node.backward(out_grads)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementary operations


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} x {bd.shape}")
    (out,) = apply_op([a, b], [ad @ bd], _matmul_backward(a, b))
    return out


def _matmul_backward(a: Tensor, b: Tensor):
    ad, bd = a.data, b.data

    def bwd(gs):
        g = gs[0]
        if g is None:
            return None, None
        ga = gb = None
        if a.requires_grad:
            if ad.ndim == 2 and bd.ndim == 2:
                ga = g @ bd.T
            elif ad.ndim == 2 and bd.ndim == 1:
                ga = g[:, None] * bd[None, :]
            elif ad.ndim == 1 and bd.ndim == 2:
                ga = bd @ g
            else:
                ga = g * bd
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim == 2:
                gb = ad.T @ g
            elif bd.ndim == 1 and ad.ndim == 2:
                gb = ad.T @ g
            elif bd.ndim == 2 and ad.ndim == 1:
                gb = ad[:, None] * g[None, :]
            else:
                gb = g * ad
        return ga, gb

    return bwd


def _binary_shapes(op: str, a: Tensor, b: Tensor):
    """Same shape, or one operand is a scalar (0-d tensor). No other broadcasting."""
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"{op} needs matching shapes, got {a.data.shape} and {b.data.shape}")


def _scalar_reduce(g: np.ndarray, operand: np.ndarray) -> np.ndarray:
    # gradient flowing into a scalar operand of an elementwise op
    if operand.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    _binary_shapes("add", a, b)

    def bwd(gs):
        g = gs[0]
        if g is None:
            return None, None
        return _scalar_reduce(g, a.data), _scalar_reduce(g, b.data)

    (out,) = apply_op([a, b], [a.data + b.data], bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    _binary_shapes("sub", a, b)

    def bwd(gs):
        g = gs[0]
        if g is None:
            return None, None
        return _scalar_reduce(g, a.data), _scalar_reduce(-g, b.data)

    (out,) = apply_op([a, b], [a.data - b.data], bwd)
    return out


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif isinstance(a, (int, float)) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data

    def bwd(gs):
        g = gs[0]
        if g is None:
            return None, None
        ga = _scalar_reduce(g * bd, ad) if a.requires_grad else None
        gb = _scalar_reduce(g * ad, bd) if b.requires_grad else None
        return ga, gb

    (out,) = apply_op([a, b], [ad * bd], bwd)
    return out


def add_rowvec(mat, vec) -> Tensor:
    """Add a vector to every row of a matrix (explicit, not silent broadcasting)."""
    mat, vec = as_tensor(mat), as_tensor(vec)
    _check_same_dtype(mat, vec)
    md, vd = mat.data, vec.data
    if md.ndim != 2 or vd.ndim != 1 or md.shape[1] != vd.shape[0]:
        raise ShapeError(f"add_rowvec needs [U, A] + [A], got {md.shape} + {vd.shape}")

    def bwd(gs):
        g = gs[0]
        if g is None:
            return None, None
        gv = g.sum(axis=0) if vec.requires_grad else None
        return (g if mat.requires_grad else None), gv

    (out,) = apply_op([mat, vec], [md + vd], bwd)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(gs):
        g = gs[0]
        return (None,) if g is None else (g * y * (1.0 - y),)

    (out,) = apply_op([a], [y], bwd)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bwd(gs):
        g = gs[0]
        return (None,) if g is None else (g * (1.0 - y * y),)

    (out,) = apply_op([a], [y], bwd)
    return out


def concat(tensors: Iterable) -> Tensor:
    """Concatenate along the last axis. Operands agree on all other axes."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    for t in ts[1:]:
        _check_same_dtype(ts[0], t)
        if t.data.ndim != ts[0].data.ndim or t.data.shape[:-1] != ts[0].data.shape[:-1]:
            raise ShapeError(
                f"concat operands disagree off the last axis: "
                f"{[tuple(t.data.shape) for t in ts]}"
            )
    widths = [t.data.shape[-1] for t in ts]

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,) * len(ts)
        parts = []
        start = 0
        for w in widths:
            parts.append(g[..., start : start + w])
            start += w
        return parts

    (out,) = apply_op(ts, [np.concatenate([t.data for t in ts], axis=-1)], bwd)
    return out


def stack(tensors: Iterable) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack of zero tensors")
    for t in ts[1:]:
        _check_same_dtype(ts[0], t)
        if t.data.shape != ts[0].data.shape:
            raise ShapeError("stack operands must share a shape")

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,) * len(ts)
        return tuple(g[i] for i in range(len(ts)))

    (out,) = apply_op(ts, [np.stack([t.data for t in ts])], bwd)
    return out


def row(a, i: int) -> Tensor:
    """Select index ``i`` along the leading axis; gradient scatters back into it."""
    a = as_tensor(a)
    n = a.data.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"row index {i} out of range for leading extent {n}")

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,)
        z = np.zeros_like(a.data)
        z[i] = g
        return (z,)

    (out,) = apply_op([a], [a.data[i].copy()], bwd)
    return out


def slice0(a, start: int, stop: int) -> Tensor:
    """Contiguous slice along the leading axis."""
    a = as_tensor(a)
    n = a.data.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of range for extent {n}")

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,)
        z = np.zeros_like(a.data)
        z[start:stop] = g
        return (z,)

    (out,) = apply_op([a], [a.data[start:stop].copy()], bwd)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape

    def bwd(gs):
        g = gs[0]
        return (None,) if g is None else (g.reshape(orig).copy(),)

    (out,) = apply_op([a], [a.data.reshape(shape).copy()], bwd)
    return out


def tsum(a) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = as_tensor(a)

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,)
        return (np.full(a.data.shape, g, dtype=a.data.dtype),)

    (out,) = apply_op([a], [np.asarray(a.data.sum(), dtype=a.data.dtype)], bwd)
    return out


def add_n(tensors: Iterable) -> Tensor:
    """Exactly rounded sum of scalar tensors (order independent, via fsum)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("add_n of zero tensors")
    for t in ts:
        if t.data.ndim != 0:
            raise ShapeError("add_n needs scalar tensors")
    total = math.fsum(float(t.data) for t in ts)

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,) * len(ts)
        return tuple(g for _ in ts)

    (out,) = apply_op(ts, [np.asarray(total, dtype=ts[0].data.dtype)], bwd)
    return out


def softmax(a) -> Tensor:
    """Stable softmax over the last axis. Each last-axis slice sums to one."""
    a = as_tensor(a)
    if a.data.ndim == 0 or a.data.shape[-1] < 1:
        raise ShapeError(f"softmax needs a last axis of length >= 1, got {a.data.shape}")
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError("softmax input contains NaN or Inf values")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,)
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    (out,) = apply_op([a], [y], bwd)
    return out


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log likelihood of ``targets`` over unmasked steps.

    ``logits`` is [T, V]; ``targets`` a length-T id sequence; ``mask`` marks
    the steps that count (None means all). With every step masked the loss
    is defined as 0 with zero gradient, so padded tail batches are harmless.
    """
    logits = as_tensor(logits)
    ld = logits.data
    if ld.ndim != 2:
        raise ShapeError(f"cross_entropy expects [T, V] logits, got {ld.shape}")
    t_steps, vocab = ld.shape
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.shape != (t_steps,):
        raise ShapeError(f"targets length {tgt.shape} does not match {t_steps} steps")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
        bad = tgt[(tgt < 0) | (tgt >= vocab)][0]
        raise IndexError(f"target id {bad} outside vocabulary of size {vocab}")
    if mask is None:
        m = np.ones(t_steps, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != (t_steps,):
            raise ShapeError(f"mask length {m.shape} does not match {t_steps} steps")
    n = int(m.sum())

    if n == 0:
        def bwd(gs):
            return (np.zeros_like(ld),)

        (out,) = apply_op([logits], [np.asarray(0.0, dtype=ld.dtype)], bwd)
        return out

    shifted = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    picked = logp[np.arange(t_steps), tgt]
    loss = -float(picked[m].sum()) / n

    def bwd(gs):
        g = gs[0]
        if g is None:
            return (None,)
        probs = np.exp(logp)
        probs[np.arange(t_steps), tgt] -= 1.0
        probs[~m] = 0.0
        return (probs * (float(g) / n),)

    (out,) = apply_op([logits], [np.asarray(loss, dtype=ld.dtype)], bwd)
    return out


# ---------------------------------------------------------------------------
# numeric gradient checking


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    tensor. Coordinates can be subsampled for large parameters. Only valid
    in float64; float32 round-off would drown the finite differences.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise PrecisionError("grad_check requires float64 parameters")
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        aflat = a.reshape(-1)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                hi = float(f().data)
                flat[i] = orig - h
                lo = float(f().data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * h)
                denom = max(abs(aflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
