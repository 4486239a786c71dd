"""Dense float64 tensors with taped reverse-mode gradients, plus AdamW.

Everything trains in 64-bit so finite-difference gradient checks are
meaningful; 32-bit exists only as a checkpoint storage option.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_LN_EPS = 1e-5


class NumericsError(RuntimeError):
    """Numerical contract violation (non-finite values, non-scalar loss)."""


class ShapeError(NumericsError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"op '{op}': incompatible shapes {' vs '.join(map(str, self.shapes))}")


class Tensor:
    """A float64 ndarray plus an optional parameter name.

    const marks detached values and literals: the tape never accumulates
    gradients into them.
    """

    __slots__ = ("data", "name", "const")

    def __init__(self, data, name: str | None = None, const: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name
        self.const = const

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericsError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A new leaf holding the same values; contributes no gradient."""
        return Tensor(self.data, const=True)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def constant(data) -> Tensor:
    return Tensor(data, const=True)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Records ops in execution order; backward replays them reversed.

    Execution order is a topological order of the graph, so the reversed
    record list visits each node after all of its uses.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """d(loss)/d(source) for each source (leaf or intermediate).

        Sources with no path to the loss get zero gradients.
        """
        if loss.data.size != 1:
            raise NumericsError(f"loss must be scalar, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise NumericsError("loss is not finite")
        wanted = {id(s) for s in sources}
        captured: dict[int, np.ndarray] = {}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if id(loss) in wanted:
            captured[id(loss)] = grads[id(loss)]
        for out, parents, backward in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if id(out) in wanted:
                captured[id(out)] = g
            for parent, contrib in zip(parents, backward(g)):
                if contrib is None or parent.const:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = contrib if prev is None else prev + contrib
        result = []
        for s in sources:
            g = captured.get(id(s))
            if g is None:
                g = grads.get(id(s))
            result.append(np.zeros_like(s.data) if g is None else np.asarray(g, dtype=np.float64))
        return result


def backward(tape: Tape, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every named parameter."""
    names = list(params)
    grads = tape.gradient(loss, [params[n] for n in names])
    return dict(zip(names, grads))


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if _TAPE_STACK:
        _TAPE_STACK[-1]._records.append((out, parents, backward_fn))
    return out


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b where b is a 2-D weight or shares a's batch dimensions."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError("matmul", ad.shape, bd.shape)
    if bd.ndim != 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError("matmul", ad.shape, bd.shape)
    out = Tensor(ad @ bd)

    def bw(g):
        if bd.ndim == 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = g @ bd.swapaxes(-1, -2)
            gb = ad.swapaxes(-1, -2) @ g
        return ga, gb

    return _record(out, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a 1-D bias over the last axis."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        out = Tensor(ad + bd)

        def bw(g):
            return g, g

    elif bd.ndim == 1 and ad.ndim >= 1 and ad.shape[-1] == bd.shape[0]:
        out = Tensor(ad + bd)

        def bw(g):
            return g, g.reshape(-1, bd.shape[0]).sum(axis=0)

    else:
        raise ShapeError("add", ad.shape, bd.shape)
    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError("mul", ad.shape, bd.shape)
    out = Tensor(ad * bd)
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def softmax_last(a: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record(out, (a,), bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Layer normalization over the last axis with learned gain and bias."""
    xd = x.data
    d = xd.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layernorm", xd.shape, gain.data.shape, bias.data.shape)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bw(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _record(out, (x, gain, bias), bw)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _record(out, (a,), bw)


def take(t: Tensor, indices) -> Tensor:
    """Rows of t selected along axis 0 by an integer array (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(t.data[idx])

    def bw(g):
        gt = np.zeros_like(t.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (t,), bw)


def slice_(t: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with gradient scattered back."""
    out = Tensor(np.array(t.data[key]))

    def bw(g):
        gt = np.zeros_like(t.data)
        gt[key] = g
        return (gt,)

    return _record(out, (t,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    base = list(datas[0].shape)
    for d in datas[1:]:
        other = list(d.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError("concat", *[d.shape for d in datas])
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]

    def bw(g):
        grads = []
        start = 0
        for size in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            grads.append(g[tuple(sl)])
            start += size
        return tuple(grads)

    return _record(out, tuple(parts), bw)


def transpose(t: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(t.data.transpose(axes))
    inverse = tuple(np.argsort(axes))
    return _record(out, (t,), lambda g: (g.transpose(inverse),))


def reshape(t: Tensor, shape) -> Tensor:
    orig = t.data.shape
    out = Tensor(t.data.reshape(shape))
    return _record(out, (t,), lambda g: (g.reshape(orig),))


def log(t: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log of max(t, floor); gradient is zero in the clamped region."""
    clamped = np.maximum(t.data, floor)
    out = Tensor(np.log(clamped))
    alive = (t.data >= floor).astype(np.float64)
    return _record(out, (t,), lambda g: (g * alive / clamped,))


def sum_(t: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(t.data.sum(axis=axis))
    shape = t.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(out, (t,), bw)


def mean(t: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(t.data.mean(axis=axis))
    shape = t.data.shape
    n = t.data.size if axis is None else shape[axis]

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy() / n,)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy() / n,)

    return _record(out, (t,), bw)


def dropout(t: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise NumericsError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return t
    keep = (rng.random(t.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(t.data * keep)
    return _record(out, (t,), lambda g: (g * keep,))


_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "softmax-last-axis": softmax_last,
    "layernorm": layernorm,
    "gelu": gelu,
    "embedding-lookup": take,
    "slice": slice_,
    "concat": concat,
    "transpose": transpose,
    "scale": scale,
    "log": log,
    "sum": sum_,
    "mean": mean,
    "reshape": reshape,
    "dropout": dropout,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name; kind must be one of the supported kinds."""
    if kind not in _OPS:
        raise NumericsError(f"unknown op kind '{kind}'")
    return _OPS[kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamWState:
    """Per-parameter Adam moments plus decoupled weight decay settings."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adamw_step(state: AdamWState, params: dict[str, Tensor],
               grads: dict[str, np.ndarray]) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Decay multiplies parameters by (1 - lr * weight_decay); it is never
    folded into the gradient.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    decay = 1.0 - state.lr * state.weight_decay
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise ShapeError(f"adamw_step[{name}]", g.shape, p.data.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= decay
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def finite_difference_gradients(f: Callable[[], float], params: Iterable[Tensor],
                                h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of f() w.r.t. each parameter, elementwise.

    f re-evaluates the computation from the parameters' current values;
    parameters are restored exactly after probing.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f()
            flat[i] = orig - h
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0
