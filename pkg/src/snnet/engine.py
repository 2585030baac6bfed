"""Minimal reverse-mode autodiff engine on numpy arrays.

Define-by-run: every operation returns a new ``Tensor`` holding the forward
value and a closure that scatters the output gradient back to its parents.
Only the primitives the enhancement network needs are provided; everything is
single-threaded and deterministic (fixed summation order throughout).
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(
            data, np.ndarray
        ) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable[[], None] | None = None

    # -- basics ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
                # free graph references as we go
                node._backward = None
                node._parents = ()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul_scalar(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), mul_scalar(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, float(other))
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __truediv__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, _as_tensor(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x, dtype=np.float64) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference mode).

    Inside the context every op returns a plain leaf Tensor, so large
    intermediates (im2col buffers etc.) are freed as soon as the forward
    pass moves on instead of being pinned by backward closures.
    """

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _node(data: np.ndarray, parents: Iterable[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(data)
    if not _grad_enabled:
        return out
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents
        out._backward = backward
    return out


def _tracked(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad or t._parents for t in tensors)


# -- elementwise --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw():
        g = out.grad
        if _tracked(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if _tracked(b):
            b._accumulate(_unbroadcast(g, b.shape))

    out = _node(out_data, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bw():
        g = out.grad
        if _tracked(a):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if _tracked(b):
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out = _node(out_data, (a, b), bw)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def bw():
        g = out.grad
        if _tracked(a):
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if _tracked(b):
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.shape))

    out = _node(out_data, (a, b), bw)
    return out


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bw():
        a._accumulate(out.grad * c)

    out = _node(out_data, (a,), bw)
    return out


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p with real p; caller guards the a<=0 domain."""
    out_data = a.data**p

    def bw():
        a._accumulate(out.grad * p * a.data ** (p - 1.0))

    out = _node(out_data, (a,), bw)
    return out


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw():
        a._accumulate(out.grad * 0.5 / out_data)

    out = _node(out_data, (a,), bw)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bw():
        a._accumulate(out.grad * out_data * (1.0 - out_data))

    out = _node(out_data, (a,), bw)
    return out


def softplus(a: Tensor) -> Tensor:
    # log1p(exp(-|x|)) + max(x, 0) form, stable for large |x|
    out_data = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0.0)

    def bw():
        a._accumulate(out.grad / (1.0 + np.exp(-a.data)))

    out = _node(out_data, (a,), bw)
    return out


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """y = x for x>0, slope*x otherwise; slope broadcasts on the last axis."""
    pos = x.data > 0
    out_data = np.where(pos, x.data, slope.data * x.data)

    def bw():
        g = out.grad
        if _tracked(x):
            x._accumulate(np.where(pos, g, slope.data * g))
        if _tracked(slope):
            slope._accumulate(_unbroadcast(np.where(pos, 0.0, g * x.data), slope.shape))

    out = _node(out_data, (x, slope), bw)
    return out


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select with a constant boolean mask (mask carries no gradient)."""
    out_data = np.where(cond, a.data, b.data)

    def bw():
        g = out.grad
        zero = np.zeros_like(g)
        if _tracked(a):
            a._accumulate(_unbroadcast(np.where(cond, g, zero), a.shape))
        if _tracked(b):
            b._accumulate(_unbroadcast(np.where(cond, zero, g), b.shape))

    out = _node(out_data, (a, b), bw)
    return out


# -- reductions / shaping -----------------------------------------------


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw():
        g = out.grad
        if axis is not None and not keepdims:
            ax = (axis,) if np.isscalar(axis) else tuple(axis)
            g = np.expand_dims(g, ax)
        a._accumulate(np.broadcast_to(g, a.shape))

    out = _node(out_data, (a,), bw)
    return out


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in ((axis,) if np.isscalar(axis) else axis)]
    )
    return mul_scalar(sum_(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bw():
        a._accumulate(out.grad.reshape(a.shape))

    out = _node(out_data, (a,), bw)
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def bw():
        a._accumulate(out.grad.transpose(inv))

    out = _node(out_data, (a,), bw)
    return out


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if not _tracked(t):
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    out = _node(out_data, tensors, bw)
    return out


def stack_last(tensors: list[Tensor]) -> Tensor:
    """Stack along a new trailing axis."""
    expanded = [reshape(t, t.shape + (1,)) for t in tensors]
    return concat(expanded, axis=-1)


def slice_(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def bw():
        g = np.zeros_like(a.data)
        g[idx] = out.grad
        a._accumulate(g)

    out = _node(out_data, (a,), bw)
    return out


def pad_last(a: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad the last axis."""
    widths = [(0, 0)] * (a.data.ndim - 1) + [(before, after)]
    out_data = np.pad(a.data, widths)

    def bw():
        idx = [slice(None)] * (a.data.ndim - 1) + [
            slice(before, before + a.shape[-1])
        ]
        a._accumulate(out.grad[tuple(idx)])

    out = _node(out_data, (a,), bw)
    return out


# -- linear algebra -----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw():
        g = out.grad
        if _tracked(a):
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if _tracked(b):
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    out = _node(out_data, (a, b), bw)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis with max-subtraction for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw():
        g = out.grad
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a._accumulate(out_data * (g - dot))

    out = _node(out_data, (a,), bw)
    return out


# -- convolutions -------------------------------------------------------


def _same_pads(n: int, k: int, s: int) -> tuple[int, int, int]:
    """Output extent and (before, after) zero padding for ceil(n/s) output.

    Symmetric padding; the extra sample goes on the trailing side.
    """
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def _im2col(xd: np.ndarray, kh: int, kw: int, st: int, sf: int):
    """Column matrix [B*To*Fo, kh*kw*Cin] plus padding bookkeeping."""
    B, T, F, cin = xd.shape
    To, pt0, pt1 = _same_pads(T, kh, st)
    Fo, pf0, pf1 = _same_pads(F, kw, sf)
    xp = np.pad(xd, ((0, 0), (pt0, pt1), (pf0, pf1), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::st, ::sf]
    # reorder to [B,To,Fo,kh,kw,Cin] so columns match the kernel layout
    col = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return col.reshape(B * To * Fo, kh * kw * cin), (To, Fo, pt0, pf0, xp.shape)


def _col2im(gcol: np.ndarray, x_shape, xp_shape, kh, kw, st, sf, To, Fo, pt0, pf0):
    """Adjoint of _im2col: scatter-add columns back onto the input."""
    B, T, F, cin = x_shape
    gp = gcol.reshape(B, To, Fo, kh, kw, cin)
    gxp = np.zeros(xp_shape, dtype=gcol.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i : i + To * st : st, j : j + Fo * sf : sf, :] += gp[:, :, :, i, j, :]
    return gxp[:, pt0 : pt0 + T, pf0 : pf0 + F, :]


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: tuple[int, int]) -> Tensor:
    """Same-padded 2-D convolution over [B,T,F,Cin] with kernel [kh,kw,Cin,Cout]."""
    B, T, F, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    st, sf = stride
    col, (To, Fo, pt0, pf0, xp_shape) = _im2col(x.data, kh, kw, st, sf)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out_data = (col @ wmat).reshape(B, To, Fo, cout) + b.data

    def bw():
        g = out.grad
        gyf = g.reshape(B * To * Fo, cout)
        if _tracked(w):
            w._accumulate((col.T @ gyf).reshape(w.shape))
        if _tracked(b):
            b._accumulate(g.sum(axis=(0, 1, 2)))
        if _tracked(x):
            gcol = gyf @ wmat.T
            x._accumulate(_col2im(gcol, x.shape, xp_shape, kh, kw, st, sf,
                                  To, Fo, pt0, pf0))

    out = _node(out_data, (x, w, b), bw)
    return out


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor, stride: tuple[int, int]) -> Tensor:
    """Adjoint of ``conv2d``: maps [B,T,F,Cout] to [B,T*st,F*sf,Cin].

    Kernel layout matches conv2d ([kh,kw,Cin,Cout]); the transpose runs it
    backwards, so the output picks up Cin channels.
    """
    B, T, F, cx = x.shape
    kh, kw, cin, cout = w.shape
    if cx != cout:
        raise ShapeError(f"conv2d_transpose: input has {cx} channels, kernel expects {cout}")
    st, sf = stride
    Nt, Nf = T * st, F * sf
    To, pt0, pt1 = _same_pads(Nt, kh, st)
    Fo, pf0, pf1 = _same_pads(Nf, kw, sf)
    if (To, Fo) != (T, F):
        raise ShapeError("conv2d_transpose: output extent inconsistent with stride")
    wmat = w.data.reshape(kh * kw * cin, cout)
    xp_shape = (B, Nt + pt0 + pt1, Nf + pf0 + pf1, cin)
    gcol = x.data.reshape(B * T * F, cout) @ wmat.T
    out_data = _col2im(gcol, (B, Nt, Nf, cin), xp_shape, kh, kw, st, sf,
                       To, Fo, pt0, pf0) + b.data

    def bw():
        g = out.grad
        col, _ = _im2col(g, kh, kw, st, sf)  # [B*T*F, kh*kw*Cin]
        if _tracked(x):
            x._accumulate((col @ wmat).reshape(x.shape))
        if _tracked(w):
            w._accumulate((col.T @ x.data.reshape(B * T * F, cout)).reshape(w.shape))
        if _tracked(b):
            b._accumulate(g.sum(axis=(0, 1, 2)))

    out = _node(out_data, (x, w, b), bw)
    return out


# -- batch norm ---------------------------------------------------------


class RunningStats:
    """Per-channel running mean/variance for inference-mode batch norm."""

    def __init__(self, channels: int, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, mean: np.ndarray, var: np.ndarray, momentum: float) -> None:
        self.mean = momentum * self.mean + (1.0 - momentum) * mean
        self.var = momentum * self.var + (1.0 - momentum) * var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    momentum: float = 0.99,
    eps: float = 1e-5,
) -> Tensor:
    """Channel-wise batch norm over axes (0,1,2) of a [B,T,F,C] tensor."""
    if training:
        mu = x.data.mean(axis=(0, 1, 2))
        var = x.data.var(axis=(0, 1, 2))
        stats.update(mu, var, momentum)
    else:
        mu, var = stats.mean, stats.var
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * ivstd
    out_data = gamma.data * xhat + beta.data

    def bw():
        g = out.grad
        if _tracked(gamma):
            gamma._accumulate((g * xhat).sum(axis=(0, 1, 2)))
        if _tracked(beta):
            beta._accumulate(g.sum(axis=(0, 1, 2)))
        if _tracked(x):
            gxhat = g * gamma.data
            if training:
                m = x.data.size // x.shape[-1]
                dvar = (gxhat * (x.data - mu)).sum(axis=(0, 1, 2)) * (-0.5) * ivstd**3
                dmu = (-gxhat * ivstd).sum(axis=(0, 1, 2)) + dvar * (
                    -2.0 * (x.data - mu)
                ).mean(axis=(0, 1, 2))
                gx = gxhat * ivstd + dvar * 2.0 * (x.data - mu) / m + dmu / m
            else:
                gx = gxhat * ivstd
            x._accumulate(gx)

    out = _node(out_data, (x, gamma, beta), bw)
    return out


# -- framing ------------------------------------------------------------


def frame(x: Tensor, frame_len: int, hop: int, num_frames: int) -> Tensor:
    """Slice [B,L] into overlapping frames [B,T,K]; end is zero-padded.

    Requires hop to divide frame_len (true for 50% overlap).
    """
    if frame_len % hop != 0:
        raise ShapeError("frame: hop must divide frame length")
    B, L = x.shape
    span = (num_frames - 1) * hop + frame_len
    xp = np.pad(x.data, ((0, 0), (0, max(span - L, 0))))
    out_data = sliding_window_view(xp, frame_len, axis=1)[:, ::hop][:, :num_frames].copy()

    def bw():
        g = out.grad
        gxp = np.zeros((B, span), dtype=x.dtype)
        for c in range(frame_len // hop):
            chunk = g[:, :, c * hop : (c + 1) * hop].reshape(B, num_frames * hop)
            gxp[:, c * hop : c * hop + num_frames * hop] += chunk
        x._accumulate(gxp[:, :L])

    out = _node(out_data, (x,), bw)
    return out


def overlap_add(frames: Tensor, hop: int) -> Tensor:
    """Scatter-add frames [B,T,K] back to [B,(T-1)*hop+K]."""
    B, T, K = frames.shape
    if K % hop != 0:
        raise ShapeError("overlap_add: hop must divide frame length")
    span = (T - 1) * hop + K
    out_data = np.zeros((B, span), dtype=frames.dtype)
    for c in range(K // hop):
        out_data[:, c * hop : c * hop + T * hop] += frames.data[
            :, :, c * hop : (c + 1) * hop
        ].reshape(B, T * hop)

    def bw():
        win = sliding_window_view(out.grad, K, axis=1)[:, ::hop][:, :T]
        frames._accumulate(win)

    out = _node(out_data, (frames,), bw)
    return out


# -- initialization -----------------------------------------------------


def fan_in_out(shape: tuple) -> tuple[int, int]:
    if len(shape) == 4:  # conv kernel [kh,kw,Cin,Cout]
        rf = shape[0] * shape[1]
        return rf * shape[2], rf * shape[3]
    if len(shape) == 2:
        return shape[0], shape[1]
    n = int(np.prod(shape))
    return n, n


def xavier_init(shape: tuple, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    fi, fo = fan_in_out(shape)
    bound = np.sqrt(6.0 / (fi + fo))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# -- parameter store ----------------------------------------------------


class ParamStore:
    """Named parameter tensors plus non-trainable buffers (BN running stats)."""

    def __init__(self, dtype=np.float64):
        self.dtype = dtype
        self.tensors: dict[str, Tensor] = {}
        self.trainable: set[str] = set()
        self.stats: dict[str, RunningStats] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=trainable)
        self.tensors[name] = t
        if trainable:
            self.trainable.add(name)
        return t

    def add_stats(self, name: str, channels: int) -> RunningStats:
        if name in self.stats:
            raise KeyError(f"duplicate stats name: {name}")
        s = RunningStats(channels, dtype=self.dtype)
        self.stats[name] = s
        return s

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def named(self, prefix: str = "", trainable_only: bool = False):
        for name in self.tensors:
            if not name.startswith(prefix):
                continue
            if trainable_only and name not in self.trainable:
                continue
            yield name, self.tensors[name]

    def set_trainable(self, predicate) -> None:
        """Restrict the trainable set; frozen tensors stop requiring grad."""
        self.trainable = {n for n in self.tensors if predicate(n)}
        for n, t in self.tensors.items():
            t.requires_grad = n in self.trainable

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent state (parameters + running stats) as flat arrays."""
        out = {n: t.data for n, t in self.tensors.items()}
        for n, s in self.stats.items():
            out[n + ".running_mean"] = s.mean
            out[n + ".running_var"] = s.var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.tensors.items():
            if n not in arrays:
                raise KeyError(f"checkpoint missing tensor: {n}")
            if arrays[n].shape != t.data.shape:
                raise ShapeError(f"checkpoint shape mismatch for {n}")
            t.data = arrays[n].astype(self.dtype)
        for n, s in self.stats.items():
            s.mean = arrays[n + ".running_mean"].astype(self.dtype)
            s.var = arrays[n + ".running_var"].astype(self.dtype)


# -- optimizer ----------------------------------------------------------


class Adam:
    """Standard bias-corrected Adam over a fixed set of named parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name in self.params:
            p = self.params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape mismatch for {name}")
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self, prefix: str = "adam.") -> dict[str, np.ndarray]:
        out = {prefix + "t": np.array([float(self.t)])}
        for n in self.params:
            out[prefix + "m." + n] = self.m[n]
            out[prefix + "v." + n] = self.v[n]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "adam.") -> None:
        self.t = int(arrays[prefix + "t"][0])
        for n in self.params:
            self.m[n] = arrays[prefix + "m." + n].copy()
            self.v[n] = arrays[prefix + "v." + n].copy()


# -- gradient checking --------------------------------------------------


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    samples_per_param: int = 4,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> tuple[float, str]:
    """Compare reverse-mode gradients with central finite differences.

    ``loss_fn`` rebuilds the scalar loss graph from the current parameter
    values on every call. Returns (max relative error, offending parameter).

    ``floor`` is the denominator floor of the relative error: gradient
    components smaller than it are compared absolutely, since central
    differences carry roundoff noise of order ``ulp(loss) / (2 * eps)``
    regardless of the true gradient magnitude.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for n, p in params.items()}
    worst = 0.0
    worst_name = ""
    for name, p in params.items():
        flat = p.data.reshape(-1)
        k = min(samples_per_param, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(loss_fn().data)
            flat[i] = orig - eps
            lm = float(loss_fn().data)
            flat[i] = orig
            num = (lp - lm) / (2.0 * eps)
            ana = float(analytic[name].reshape(-1)[i])
            denom = max(abs(ana) + abs(num), floor)
            rel = abs(ana - num) / denom
            if rel > worst:
                worst = rel
                worst_name = name
    return worst, worst_name


# -- checkpoint format --------------------------------------------------

CHECKPOINT_MAGIC = b"SNNETCK1"


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write magic, length-prefixed JSON header, then raw LE payloads."""
    entries = []
    offset = 0
    names = list(arrays.keys())
    for name in names:
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<")
        entries.append(
            {"name": name, "shape": list(a.shape), "dtype": dt.str, "offset": offset}
        )
        offset += a.size * a.itemsize
    header = json.dumps({"tensors": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name]).astype(
                arrays[name].dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic bytes)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    payload = blob[16 + hlen :]
    arrays: dict[str, np.ndarray] = {}
    for ent in header["tensors"]:
        dt = np.dtype(ent["dtype"])
        n = int(np.prod(ent["shape"])) if ent["shape"] else 1
        lo = ent["offset"]
        hi = lo + n * dt.itemsize
        if hi > len(payload):
            raise ValueError(f"{path}: truncated payload for tensor {ent['name']}")
        arrays[ent["name"]] = np.frombuffer(payload[lo:hi], dtype=dt).reshape(
            ent["shape"]
        ).copy()
    return arrays, header.get("meta", {})
