"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

All data is float64. Each differentiable op builds a tape node (parent
references plus a backward closure); `backward` walks the tape once in
reverse topological order. A single tape must stay on one thread.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """Dense N-d array with optional gradient tracking.

    Values are immutable after creation except through `grad` accumulation
    and explicit optimizer updates on leaf parameters.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "",
    ):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents = _parents
        self._backward: Callable | None = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: Sequence[Tensor], op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents), _op=op)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear-algebra primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data + b.data, (a, b), "add")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(g, b.shape))

    out._backward = bw
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data * b.data, (a, b), "mul")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(g * a.data, b.shape))

    out._backward = bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = _make(a.data * s, (a,), "scale")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, g * s)

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, g @ b.data.T)
        if b.requires_grad:
            accum(b, a.data.T @ g)

    out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0), (a,), "relu")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, g * (a.data > 0.0))

    out._backward = bw
    return out


def concatenate(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, accum):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                accum(t, p)

    out._backward = bw
    return out


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out = _make(np.stack([t.data for t in tensors], axis=axis), tensors, "stack")

    def bw(g, accum):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                accum(t, np.take(g, i, axis=axis))

    out._backward = bw
    return out


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Take one slice along `axis` (shape loses that axis)."""
    out = _make(np.take(a.data, index, axis=axis), (a,), "select")

    def bw(g, accum):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            sl[axis] = index
            full[tuple(sl)] = g
            accum(a, full)

    out._backward = bw
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), "reshape")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, g.reshape(a.shape))

    out._backward = bw
    return out


def mean(a: Tensor, axis: int) -> Tensor:
    out = _make(a.data.mean(axis=axis), (a,), "mean")
    n = a.shape[axis]

    def bw(g, accum):
        if a.requires_grad:
            accum(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    out._backward = bw
    return out


def tsum(a: Tensor) -> Tensor:
    out = _make(a.data.sum(), (a,), "sum")

    def bw(g, accum):
        if a.requires_grad:
            accum(a, np.full(a.shape, float(g)))

    out._backward = bw
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (a,), "softmax")

    def bw(g, accum):
        if a.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            accum(a, s * (g - dot))

    out._backward = bw
    return out


def cross_entropy(logits: Tensor, target: Array) -> Tensor:
    """Mean per-frame cross-entropy of softmax(logits) against a target
    distribution. `target` is a constant [T, K] simplex array."""
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ValueError(f"cross_entropy shape mismatch: {logits.shape} vs {target.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    t_frames = logits.shape[0] if logits.data.ndim > 1 else 1
    loss = -(target * logp).sum() / t_frames
    out = _make(np.asarray(loss), (logits,), "cross_entropy")
    probs = np.exp(logp)

    def bw(g, accum):
        if logits.requires_grad:
            accum(logits, float(g) * (probs - target) / t_frames)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# temporal primitives (time is axis 0)
# ---------------------------------------------------------------------------

def _time_linear_map(a: Tensor, w: Array, op: str) -> Tensor:
    """Apply a fixed linear map over the time axis: out[o] = sum_t w[o,t] x[t]."""
    out = _make(np.tensordot(w, a.data, axes=(1, 0)), (a,), op)

    def bw(g, accum):
        if a.requires_grad:
            accum(a, np.tensordot(w.T, g, axes=(1, 0)))

    out._backward = bw
    return out


def _pool_matrix(t: int, bins: int) -> Array:
    base, rem = divmod(t, bins)
    w = np.zeros((bins, t))
    start = 0
    for i in range(bins):
        length = base + (1 if i < rem else 0)
        w[i, start:start + length] = 1.0 / length
        start += length
    return w


def avg_pool_time(a: Tensor, bins: int) -> Tensor:
    """Average over `bins` contiguous near-equal spans of the time axis;
    remainder frames go to the earliest bins."""
    t = a.shape[0]
    if bins <= 0 or bins > t:
        raise ValueError(f"avg_pool_time: bins={bins} invalid for T={t}")
    return _time_linear_map(a, _pool_matrix(t, bins), "avg_pool_time")


def _interp_matrix(t: int, t_out: int) -> Array:
    w = np.zeros((t_out, t))
    if t == 1:
        w[:, 0] = 1.0
        return w
    if t_out == 1:
        w[0, 0] = 1.0
        return w
    for j in range(t_out):
        p = j * (t - 1) / (t_out - 1)
        lo = int(np.floor(p))
        hi = min(lo + 1, t - 1)
        f = p - lo
        w[j, lo] += 1.0 - f
        w[j, hi] += f
    return w


def interpolate_time(a: Tensor, t_out: int) -> Tensor:
    """Endpoint-aligned linear resampling of the time axis."""
    t = a.shape[0]
    if t_out <= 0:
        raise ValueError(f"interpolate_time: t_out={t_out} must be positive")
    if t_out == t:
        return a
    return _time_linear_map(a, _interp_matrix(t, t_out), "interpolate_time")


_PAD_MODES = ("none", "replicate", "zero")


def conv_time(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "none") -> Tensor:
    """1D cross-correlation along time.

    x: [T, C_in]; kernel: [k, C_in, C_out]. Pad amount is (k-1)//2 for
    replicate/zero modes, 0 for none; T' = (T + 2*pad - k)//stride + 1.
    """
    if padding not in _PAD_MODES:
        raise ValueError(f"conv_time: unknown padding {padding!r}")
    if stride < 1:
        raise ValueError(f"conv_time: stride must be >= 1, got {stride}")
    t, c_in = x.shape
    k, kc_in, c_out = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"conv_time channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    pad = 0 if padding == "none" else (k - 1) // 2
    if k > t + 2 * pad:
        raise ValueError(f"conv_time: kernel length {k} exceeds padded input {t + 2 * pad}")

    if pad:
        mode = "edge" if padding == "replicate" else "constant"
        xp = np.pad(x.data, ((pad, pad), (0, 0)), mode=mode)
    else:
        xp = x.data
    t_out = (t + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride]  # [T', C_in, k]
    y = np.einsum("tck,kcd->td", win, kernel.data)
    out = _make(y, (x, kernel), "conv_time")

    def bw(g, accum):
        if kernel.requires_grad:
            accum(kernel, np.einsum("tck,td->kcd", win, g))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            gwin = np.einsum("td,kcd->tkc", g, kernel.data)  # [T', k, C_in]
            for i in range(t_out):
                gxp[i * stride:i * stride + k] += gwin[i]
            if pad:
                gx = gxp[pad:pad + t].copy()
                if padding == "replicate":
                    gx[0] += gxp[:pad].sum(axis=0)
                    gx[-1] += gxp[pad + t:].sum(axis=0)
            else:
                gx = gxp
            accum(x, gx)

    out._backward = bw
    return out


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Valid 2D cross-correlation. x: [H, W, C_in]; kernel: [kh, kw, C_in, C_out]."""
    h, w, c_in = x.shape
    kh, kw, kc_in, c_out = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"conv2d channel mismatch: {x.shape} vs {kernel.shape}")
    if kh > h or kw > w:
        raise ValueError(f"conv2d: kernel {kernel.shape} larger than input {x.shape}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(0, 1))  # [H',W',C,kh,kw]
    y = np.einsum("hwcij,ijcd->hwd", win, kernel.data)
    out = _make(y, (x, kernel), "conv2d")

    def bw(g, accum):
        if kernel.requires_grad:
            accum(kernel, np.einsum("hwcij,hwd->ijcd", win, g))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gwin = np.einsum("hwd,ijcd->hwijc", g, kernel.data)
            for i in range(kh):
                for j in range(kw):
                    gx[i:i + h - kh + 1, j:j + w - kw + 1] += gwin[:, :, i, j, :]
            accum(x, gx)

    out._backward = bw
    return out


def graph_conv(x: Tensor, norm: Array, mask: Tensor, weights: Tensor) -> Tensor:
    """Per-frame graph propagation: Y[t] = (norm * mask) @ X[t] @ W.

    x: [T, V, C_in]; norm: constant [V, V]; mask: learnable [V, V];
    weights: [C_in, C_out].
    """
    t, v, c_in = x.shape
    if norm.shape != (v, v) or mask.shape != (v, v):
        raise ValueError(f"graph_conv adjacency mismatch: x {x.shape}, norm {norm.shape}, mask {mask.shape}")
    if weights.shape[0] != c_in:
        raise ValueError(f"graph_conv weight mismatch: x {x.shape} vs weights {weights.shape}")
    a = norm * mask.data
    xw = x.data @ weights.data          # [T, V, D]
    y = np.matmul(a, xw)                # [T, V, D]
    out = _make(y, (x, mask, weights), "graph_conv")

    def bw(g, accum):
        if x.requires_grad or weights.requires_grad:
            at_g = np.matmul(a.T, g)    # [T, V, D]
            if x.requires_grad:
                accum(x, at_g @ weights.data.T)
            if weights.requires_grad:
                accum(weights, np.tensordot(x.data, at_g, axes=([0, 1], [0, 1])))
        if mask.requires_grad:
            accum(mask, norm * np.tensordot(g, xw, axes=([0, 2], [0, 2])))

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# reverse pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dx into `grad` of every tracked tensor on the tape.

    Repeated calls without `zero_grad` accumulate.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [loss]
    while stack_:
        node = stack_[-1]
        if id(node) in seen:
            stack_.pop()
            continue
        pending = [p for p in node._parents if id(p) not in seen]
        if pending:
            stack_.extend(pending)
        else:
            seen.add(id(node))
            topo.append(node)
            stack_.pop()

    gmap: dict[int, Array] = {id(loss): np.asarray(1.0)}

    def accum(t: Tensor, g: Array) -> None:
        key = id(t)
        if key in gmap:
            gmap[key] = gmap[key] + g
        else:
            gmap[key] = np.array(g, dtype=np.float64)

    for node in reversed(topo):
        g = gmap.get(id(node))
        if g is None or node._backward is None:
            continue
        node._backward(g, accum)

    for node in topo:
        if node.requires_grad and id(node) in gmap:
            g = np.broadcast_to(gmap[id(node)], node.shape)
            if node.grad is None:
                node.grad = np.array(g)
            else:
                node.grad = node.grad + g


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Central-difference check of `fn`'s gradients at `inputs`.

    Returns the worst relative error over every coordinate of every input
    with requires_grad, with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"grad_check: eps={eps} outside (0, 1e-3]")
    for t in inputs:
        t.zero_grad()
    loss = fn(*inputs)
    if loss.data.ndim != 0:
        raise ValueError(f"grad_check: fn returned non-scalar of shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise ValueError("grad_check: fn returned non-finite value")
    backward(loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*inputs).item()
            flat[i] = orig - eps
            lo = fn(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError("grad_check: fn returned non-finite value")
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
