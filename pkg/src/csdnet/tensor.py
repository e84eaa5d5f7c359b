"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are numpy float64 arrays; every operation is a module-level function
returning a fresh Tensor. Each op that sees a gradient-requiring input
records a backward closure, and ``Tensor.backward`` replays the recorded
closures in exact reverse creation order. Tensors with
``requires_grad=False`` (constants, detached copies) never receive gradient.

The library is deliberately small: just the primitives the training pipeline
needs, with shapes checked eagerly and numerically stabilized activations so
finite inputs always produce finite outputs.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from . import diagnostics

L2_EPS = 1e-12  # clamp floor for near-zero norms in l2_normalize

_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the value with no history; never accumulates gradient."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable tensor.

        Only valid on scalars. Nodes run in reverse creation order, which is
        a valid reverse topological order because inputs always predate the
        ops that consume them.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.data)
        nodes: list[Tensor] = []
        seen = {id(self)}
        stack = [self]
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._id, reverse=True)
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- scalar/elementwise sugar used by the losses --------------------
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), bw)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accumulate(a, g)

    return _node(a.data + float(c), (a,), bw)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accumulate(a, g * c)

    return _node(a.data * c, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _node(np.sum(a.data), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _node(np.mean(a.data), (a,), bw)


def sum_tensors(ts: Sequence[Tensor]) -> Tensor:
    """Elementwise sum of same-shaped tensors as a single n-ary node."""
    ts = list(ts)
    if not ts:
        raise ValueError("sum_tensors: empty input")
    for t in ts[1:]:
        _check_same_shape(ts[0], t, "sum_tensors")

    def bw(g):
        for t in ts:
            _accumulate(t, g)

    total = ts[0].data.copy()
    for t in ts[1:]:
        total += t.data
    return _node(total, tuple(ts), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    """Elementwise logistic, stable for large magnitudes in both directions."""
    d = a.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# vector ops
# ---------------------------------------------------------------------------

def _check_vector(a: Tensor, op: str) -> None:
    if a.data.ndim != 1:
        raise ValueError(f"{op}: expected a 1-d tensor, got shape {a.shape}")


def softmax(v: Tensor) -> Tensor:
    """Probability vector; max-subtracted for stability."""
    _check_vector(v, "softmax")
    z = v.data - np.max(v.data)
    e = np.exp(z)
    s = e / np.sum(e)

    def bw(g):
        _accumulate(v, s * (g - np.dot(g, s)))

    return _node(s, (v,), bw)


def log_softmax(v: Tensor) -> Tensor:
    _check_vector(v, "log_softmax")
    z = v.data - np.max(v.data)
    ls = z - np.log(np.sum(np.exp(z)))

    def bw(g):
        _accumulate(v, g - np.exp(ls) * np.sum(g))

    return _node(ls, (v,), bw)


def l2_normalize(v: Tensor) -> Tensor:
    """v / max(|v|, L2_EPS). The clamp path is counted in diagnostics."""
    _check_vector(v, "l2_normalize")
    n = float(np.linalg.norm(v.data))
    clamped = n < L2_EPS
    if clamped:
        diagnostics.bump("l2_normalize.clamped")
    denom = max(n, L2_EPS)
    y = v.data / denom

    def bw(g):
        if clamped:
            _accumulate(v, g / denom)
        else:
            _accumulate(v, (g - y * np.dot(y, g)) / denom)

    return _node(y, (v,), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    _check_vector(a, "dot")
    _check_same_shape(a, b, "dot")

    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(np.dot(a.data, b.data), (a, b), bw)


def matvec(w: Tensor, v: Tensor) -> Tensor:
    """w @ v for a 2-d weight and 1-d vector."""
    if w.data.ndim != 2 or v.data.ndim != 1 or w.shape[1] != v.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {w.shape} and {v.shape}")

    def bw(g):
        _accumulate(w, np.outer(g, v.data))
        _accumulate(v, w.data.T @ g)

    return _node(w.data @ v.data, (w, v), bw)


def stack_rows(vs: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length into an (n, d) matrix."""
    vs = list(vs)
    if not vs:
        raise ValueError("stack_rows: empty input")
    for v in vs:
        _check_vector(v, "stack_rows")
        if v.shape != vs[0].shape:
            raise ValueError("stack_rows: rows differ in length")

    def bw(g):
        for i, v in enumerate(vs):
            _accumulate(v, g[i])

    return _node(np.stack([v.data for v in vs]), tuple(vs), bw)


def gram(a: Tensor) -> Tensor:
    """a @ a.T, the pairwise dot-product matrix of the rows of a."""
    if a.data.ndim != 2:
        raise ValueError(f"gram: expected a 2-d tensor, got shape {a.shape}")

    def bw(g):
        _accumulate(a, (g + g.T) @ a.data)

    return _node(a.data @ a.data.T, (a,), bw)


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def _check_chw(x: Tensor, op: str) -> None:
    if x.data.ndim != 3:
        raise ValueError(f"{op}: expected a (channels, h, w) tensor, got shape {x.shape}")


def conv2d_1x1(x: Tensor, k: Tensor) -> Tensor:
    """Project (c, h, w) features to an (h, w) map with a per-channel kernel."""
    _check_chw(x, "conv2d_1x1")
    _check_vector(k, "conv2d_1x1")
    if k.shape[0] != x.shape[0]:
        raise ValueError(
            f"conv2d_1x1: kernel length {k.shape[0]} does not match {x.shape[0]} channels"
        )

    def bw(g):
        _accumulate(x, k.data[:, None, None] * g)
        _accumulate(k, np.einsum("hw,chw->c", g, x.data))

    return _node(np.einsum("c,chw->hw", k.data, x.data), (x, k), bw)


def conv2d_3x3(x: Tensor, w: Tensor, stride: int) -> Tensor:
    """3x3 cross-correlation with zero padding 1; stride 1 or 2."""
    if stride not in (1, 2):
        raise ValueError(f"conv2d_3x3: stride must be 1 or 2, got {stride}")
    _check_chw(x, "conv2d_3x3")
    if w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"conv2d_3x3: weights must be (out, in, 3, 3), got {w.shape}")
    cin, h, wd = x.shape
    if w.shape[1] != cin:
        raise ValueError(f"conv2d_3x3: weight expects {w.shape[1]} channels, input has {cin}")
    cout = w.shape[0]
    oh = (h - 1) // stride + 1
    ow = (wd - 1) // stride + 1

    xp = np.zeros((cin, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x.data

    def window(arr, dy, dx):
        return arr[:, dy : dy + stride * (oh - 1) + 1 : stride, dx : dx + stride * (ow - 1) + 1 : stride]

    out = np.zeros((cout, oh, ow))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("oi,ihw->ohw", w.data[:, :, dy, dx], window(xp, dy, dx))

    def bw(g):
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for dy in range(3):
                for dx in range(3):
                    gw[:, :, dy, dx] = np.einsum("ohw,ihw->oi", g, window(xp, dy, dx))
            _accumulate(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for dy in range(3):
                for dx in range(3):
                    window(gxp, dy, dx)[...] += np.einsum("oi,ohw->ihw", w.data[:, :, dy, dx], g)
            _accumulate(x, gxp[:, 1:-1, 1:-1])

    return _node(out, (x, w), bw)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    _check_chw(x, "add_channel_bias")
    _check_vector(b, "add_channel_bias")
    if b.shape[0] != x.shape[0]:
        raise ValueError(f"add_channel_bias: {b.shape[0]} biases for {x.shape[0]} channels")

    def bw(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=(1, 2)))

    return _node(x.data + b.data[:, None, None], (x, b), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean of a (c, h, w) tensor."""
    _check_chw(x, "global_avg_pool")
    area = x.shape[1] * x.shape[2]

    def bw(g):
        _accumulate(x, np.broadcast_to(g[:, None, None] / area, x.shape).copy())

    return _node(x.data.mean(axis=(1, 2)), (x,), bw)


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply every channel of (c, h, w) x by the (h, w) gate map."""
    _check_chw(x, "scale_channels")
    if gate.data.ndim != 2 or gate.shape != x.shape[1:]:
        raise ValueError(f"scale_channels: gate shape {gate.shape} does not match {x.shape}")

    def bw(g):
        _accumulate(x, g * gate.data[None])
        _accumulate(gate, np.einsum("chw,chw->hw", g, x.data))

    return _node(x.data * gate.data[None], (x, gate), bw)


# ---------------------------------------------------------------------------
# bilinear resize (align-corners-false, edge-clamped)
# ---------------------------------------------------------------------------

def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation weights along one axis."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0f = np.floor(src)
    w1 = src - i0f
    i0 = np.clip(i0f, 0, n_in - 1).astype(int)
    i1 = np.clip(i0f + 1, 0, n_in - 1).astype(int)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def bilinear_resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-numpy bilinear resize of an (h, w) or (c, h, w) array."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear resize: target extents must be positive, got {out_h}x{out_w}")
    if arr.ndim not in (2, 3):
        raise ValueError(f"bilinear resize: expected 2-d or 3-d input, got shape {arr.shape}")
    r = _resize_matrix(arr.shape[-2], out_h)
    c = _resize_matrix(arr.shape[-1], out_w)
    # matmul broadcasts over a leading channel axis
    return (r @ arr) @ c.T


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bilinear resize over the trailing two axes."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: target extents must be positive, got {out_h}x{out_w}")
    if x.data.ndim not in (2, 3):
        raise ValueError(f"bilinear_resize: expected 2-d or 3-d input, got shape {x.shape}")
    r = _resize_matrix(x.shape[-2], out_h)
    c = _resize_matrix(x.shape[-1], out_w)

    def bw(g):
        _accumulate(x, (r.T @ g) @ c)

    return _node(bilinear_resize_array(x.data, out_h, out_w), (x,), bw)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
    max_coords: int | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` must map a tensor to a scalar tensor and be deterministic. When
    ``max_coords`` is set, an evenly spaced subset of coordinates is probed
    (the full analytic gradient is still exercised by one backward pass).
    Meaningful only in double precision.
    """
    x = Tensor(x.data.copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    n = flat.size
    if max_coords is not None and max_coords < n:
        coords = np.unique(np.linspace(0, n - 1, max_coords).astype(int))
    else:
        coords = np.arange(n)

    numeric = np.zeros(len(coords))
    with no_grad():
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(x).data)
            flat[i] = orig - step
            fm = float(f(x).data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2.0 * step)

    ana = analytic.reshape(-1)[coords]
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(numeric)), 1.0)
    rel = np.abs(ana - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
