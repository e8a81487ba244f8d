"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the front-ends need are provided. Every op records a
closure that maps the upstream gradient to gradients of its parents; ``backward``
walks the graph in reverse topological order.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class RandomSource:
    """Seeded random stream backed by numpy's PCG64 bit generator."""

    algorithm = "PCG64"

    def __init__(self, seed: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        """Integers in the closed range [low, high]."""
        return self.generator.integers(low, high, size=size, endpoint=True)

    def choice(self, options: Sequence):
        return options[int(self.generator.integers(0, len(options)))]

    def permutation(self, n):
        return self.generator.permutation(n)

    def spawn(self) -> "RandomSource":
        """Child stream whose seed is drawn from this one."""
        return RandomSource(int(self.generator.integers(0, 2**63)))


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op=""):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = tuple(_parents)
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = _backward
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise / structural ops -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), bw, "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


# activations -----------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)
    return _make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),), "gelu")


def tabs(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def magnitude_root(x: Tensor, p: float) -> Tensor:
    """|x| ** (1/p); the gradient is defined as 0 at the origin."""
    if p <= 1:
        raise ValueError("magnitude_root needs p > 1")
    mag = np.abs(x.data)
    out = mag ** (1.0 / p)

    def bw(g):
        d = np.zeros_like(mag)
        nz = mag > 0
        d[nz] = np.sign(x.data[nz]) * mag[nz] ** (1.0 / p - 1.0) / p
        return (g * d,)

    return _make(out, (x,), bw, f"root{p}")


def log_eps(x: Tensor, eps: float) -> Tensor:
    if eps <= 0:
        raise ValueError("log_eps needs eps > 0")
    shifted = x.data + eps
    return _make(np.log(shifted), (x,), lambda g: (g / shifted,), "log")


def activation(x: Tensor, kind: str, param: Optional[float] = None) -> Tensor:
    """Dispatch by name: relu, gelu, abs, magnitude_root (param=p), log_eps (param=eps)."""
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "abs":
        return tabs(x)
    if kind == "magnitude_root":
        return magnitude_root(x, 2.5 if param is None else param)
    if kind == "log_eps":
        return log_eps(x, 1e-10 if param is None else param)
    raise ValueError(f"unknown activation {kind!r}")


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


# layers ------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = matmul(x, transpose(weight))
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias
    return out


def _padding(length: int, kernel: int, stride: int, padding: str):
    """(pad_before, pad_after, out_length) for one axis."""
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    if padding == "valid":
        if kernel > length:
            raise DimensionError(f"kernel {kernel} larger than input extent {length}")
        return 0, 0, (length - kernel) // stride + 1
    if padding == "same":
        out = -(-length // stride)
        total = max((out - 1) * stride + kernel - length, 0)
        return total // 2, total - total // 2, out
    raise ValueError(f"unknown padding {padding!r}")


def _conv(x: Tensor, w: Tensor, b: Optional[Tensor], strides: tuple, padding: str, op: str) -> Tensor:
    nd = len(strides)
    c_in = x.shape[0]
    if w.shape[1] != c_in:
        raise ShapeError(f"{op}: input has {c_in} channels, weight expects {w.shape[1]}")
    kernel = w.shape[2:]
    pads, outs = [], []
    for axis in range(nd):
        lo, hi, n = _padding(x.shape[1 + axis], kernel[axis], strides[axis], padding)
        pads.append((lo, hi))
        outs.append(n)
    xp = np.pad(x.data, [(0, 0)] + pads) if any(p != (0, 0) for p in pads) else x.data
    wd = w.data
    c_out = wd.shape[0]

    def window(taps):
        return (slice(None),) + tuple(
            slice(t, t + s * (n - 1) + 1, s) for t, s, n in zip(taps, strides, outs)
        )

    taps_all = list(itertools.product(*(range(k) for k in kernel)))
    out = np.zeros((c_out, *outs))
    for taps in taps_all:
        out += np.tensordot(wd[(slice(None), slice(None)) + taps], xp[window(taps)], axes=([1], [0]))
    if b is not None:
        if b.shape != (c_out,):
            raise ShapeError(f"{op}: bias shape {b.shape} != ({c_out},)")
        out += b.data.reshape((c_out,) + (1,) * nd)

    spatial = tuple(range(1, nd + 1))

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for taps in taps_all:
                gxp[window(taps)] += np.tensordot(wd[(slice(None), slice(None)) + taps], g, axes=([0], [0]))
            gx = gxp[(slice(None),) + tuple(slice(lo, lo + e) for (lo, _), e in zip(pads, x.shape[1:]))]
        if w.requires_grad:
            gw = np.zeros_like(wd)
            for taps in taps_all:
                gw[(slice(None), slice(None)) + taps] = np.tensordot(g, xp[window(taps)], axes=(spatial, spatial))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=spatial)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, bw, op)


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: str = "valid") -> Tensor:
    """Cross-correlation of ``x`` [C_in, T] with ``weight`` [C_out, C_in, K]."""
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects [C,T] input and [O,C,K] weight, got {x.shape}, {weight.shape}")
    return _conv(x, weight, bias, (stride,), padding, "conv1d")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride_time: int = 1,
           stride_feature: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x`` [C_in, T, F] with ``weight`` [C_out, C_in, kT, kF]."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects [C,T,F] input and [O,C,kT,kF] weight, got {x.shape}, {weight.shape}")
    return _conv(x, weight, bias, (stride_time, stride_feature), padding, "conv2d")


def _normalize_rows(x: Tensor, rows: int, eps: float) -> Tensor:
    """Zero-mean unit-variance normalisation of each of ``rows`` equal slices."""
    flat = x.data.reshape(rows, -1)
    mu = flat.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(flat.var(axis=1, keepdims=True) + eps)
    xhat = (flat - mu) * inv

    def bw(g):
        g = g.reshape(rows, -1)
        gx = inv * (g - g.mean(axis=1, keepdims=True) - xhat * (g * xhat).mean(axis=1, keepdims=True))
        return (gx.reshape(x.shape),)

    return _make(xhat.reshape(x.shape), (x,), bw, "normalize")


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or offset.shape != (d,):
        raise ShapeError("layer_norm: gain/offset must match the last axis")
    rows = x.size // d
    return _normalize_rows(x, rows, eps) * gain + offset


def group_norm(x: Tensor, groups: int, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each group of channels of ``x`` [C, T] jointly over (channel, time)."""
    channels = x.shape[0]
    if groups < 1 or channels % groups:
        raise ValueError(f"{channels} channels not divisible into {groups} groups")
    normed = _normalize_rows(x, groups, eps)
    return normed * gain.reshape(channels, 1) + offset.reshape(channels, 1)


# graph traversal ------------------------------------------------------------


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p is not None and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor in the graph."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if parent is None or pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


# verification -----------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps_fd: float = 1e-6, tol: float = 1e-4,
               floor: float = 1e-6, corrupt: float = 0.0):
    """Compare backward() against central finite differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    ``corrupt`` perturbs the analytic gradient (negative-control hook).
    Returns ``(max_rel_error, passed)``.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    backward(f(probe))
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad.copy()
    if corrupt:
        analytic = analytic * (1.0 + corrupt) + corrupt
    numeric = np.zeros_like(analytic)
    flat = probe.data.reshape(-1)
    for i in range(flat.size):
        base = flat[i]
        flat[i] = base + eps_fd
        up = f(Tensor(probe.data)).item()
        flat[i] = base - eps_fd
        down = f(Tensor(probe.data)).item()
        flat[i] = base
        numeric.reshape(-1)[i] = (up - down) / (2 * eps_fd)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
    return err, err <= tol


def uniform_init(shape, fan_in: int, rng: RandomSource, requires_grad: bool = True, gain: float = 1.0) -> Tensor:
    """U(-b, b) with b = gain * sqrt(1 / fan_in); gain sqrt(6) gives He init for ReLU stacks."""
    bound = gain * math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad)
