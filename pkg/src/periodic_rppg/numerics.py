"""Dense tensor primitives shared by the network modules.

Every feature volume is a float64 numpy array laid out channel-first,
``(C, T, H, W)``. Functions here are pure: they never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

Triple = Tuple[int, int, int]

# Output frames processed per conv chunk; bounds temporaries on long clips.
_CONV_CHUNK_ELEMS = 1 << 23


class ShapeError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""


def _triple(v) -> Triple:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ShapeError(f"expected 3 per-axis values, got {v}")
    return v


@dataclass
class ConvParams:
    """Weights and geometry of a 3-D convolution.

    ``weight`` has shape ``(out_ch, in_ch // groups, kT, kH, kW)``; a ``kT`` of 1
    makes the layer a frame-wise 2-D convolution. ``theta`` is only read by the
    temporal-difference projection in :mod:`periodic_rppg.attention`.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)
    groups: int = 1
    theta: float = 0.0

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 5:
            raise ShapeError(f"conv weight must be 5-D, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[0],):
                raise ShapeError(
                    f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} output channels"
                )
        self.stride = _triple(self.stride)
        self.padding = _triple(self.padding)
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.weight.shape[0] % self.groups:
            raise ShapeError("output channels must be divisible by groups")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel(self) -> Triple:
        return tuple(self.weight.shape[2:])  # type: ignore[return-value]


@dataclass
class NormParams:
    """Per-channel affine batch normalization.

    ``identity=True`` turns the layer into a no-op; used by linearity probes.
    """

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    identity: bool = False

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.eps <= 0:
            raise ValueError("batch-norm epsilon must be positive")
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError("gamma and beta must be matching 1-D arrays")

    @classmethod
    def unit(cls, channels: int, eps: float = 1e-5) -> "NormParams":
        return cls(np.ones(channels), np.zeros(channels), eps)


@dataclass
class LinearParams:
    """Channel-mixing linear map: ``weight`` is ``(out, in)``."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError("linear weight must be 2-D")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[0],):
                raise ShapeError("linear bias does not match output width")


def out_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv3d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Direct cross-correlation of a ``(C_in, T, H, W)`` volume with zero padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"conv3d expects (C, T, H, W), got shape {x.shape}")
    if x.shape[0] != p.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {p.in_channels}")
    kt, kh, kw = p.kernel
    st, sh, sw = p.stride
    pt, ph, pw = p.padding
    To, Ho, Wo = (out_extent(n, k, s, q) for n, k, s, q in zip(x.shape[1:], p.kernel, p.stride, p.padding))
    if min(To, Ho, Wo) < 1:
        raise ShapeError(f"kernel {p.kernel} does not fit input extents {x.shape[1:]} with padding {p.padding}")

    xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw))) if (pt or ph or pw) else x
    cout = p.out_channels
    out = np.zeros((cout, To, Ho, Wo))
    g = p.groups
    cin_g = p.weight.shape[1]
    cout_g = cout // g
    depthwise = g > 1 and cin_g == 1 and cout_g == 1

    taps = [(a, b, c) for a in range(kt) for b in range(kh) for c in range(kw)]
    if g == 1:
        # im2col per chunk of output frames, one GEMM per chunk
        wmat = p.weight.transpose(0, 2, 3, 4, 1).reshape(cout, -1)
        step = max(1, _CONV_CHUNK_ELEMS // max(1, x.shape[0] * len(taps) * Ho * Wo))
        for t0 in range(0, To, step):
            n = min(To, t0 + step) - t0
            cols = np.empty((len(taps), x.shape[0], n, Ho, Wo))
            for i, (a, b, c) in enumerate(taps):
                ts = t0 * st + a
                cols[i] = xp[:, ts:ts + st * (n - 1) + 1:st, b:b + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw]
            out[:, t0:t0 + n] = (wmat @ cols.reshape(-1, n * Ho * Wo)).reshape(cout, n, Ho, Wo)
        if p.bias is not None:
            out += p.bias[:, None, None, None]
        return out

    step = max(1, _CONV_CHUNK_ELEMS // max(1, x.shape[0] * Ho * Wo))
    for t0 in range(0, To, step):
        t1 = min(To, t0 + step)
        n = t1 - t0
        acc = out[:, t0:t1]
        for a in range(kt):
            ts = t0 * st + a
            for b in range(kh):
                for c in range(kw):
                    sl = xp[:, ts:ts + st * (n - 1) + 1:st, b:b + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw]
                    w = p.weight[:, :, a, b, c]
                    if depthwise:
                        acc += w[:, 0, None, None, None] * sl
                    else:
                        for gi in range(g):
                            acc[gi * cout_g:(gi + 1) * cout_g] += np.tensordot(
                                w[gi * cout_g:(gi + 1) * cout_g], sl[gi * cin_g:(gi + 1) * cin_g], axes=(1, 0)
                            )
    if p.bias is not None:
        out += p.bias[:, None, None, None]
    return out


def conv_transpose_temporal(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Transposed convolution along time with kernel == stride (non-overlapping).

    ``weight`` is ``(C_in, C_out, k, 1, 1)``; each input frame expands into ``k``
    output frames, so the temporal extent grows by exactly ``k``.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 5 or weight.shape[3:] != (1, 1):
        raise ShapeError(f"temporal transposed conv needs a (Cin, Cout, k, 1, 1) kernel, got {weight.shape}")
    if x.shape[0] != weight.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {weight.shape[0]}")
    k = weight.shape[2]
    C, T, H, W = x.shape
    # out[o, t*k + j] = sum_c w[c, o, j] * x[c, t]
    y = np.einsum("coj,cthw->otjhw", weight[:, :, :, 0, 0], x, optimize=True)
    y = y.reshape(weight.shape[1], T * k, H, W)
    if bias is not None:
        y = y + np.asarray(bias)[:, None, None, None]
    return y


def batch_norm(x: np.ndarray, p: NormParams) -> np.ndarray:
    """Normalize each channel with statistics of the current input only."""
    x = np.asarray(x, dtype=np.float64)
    if p.identity:
        return x.copy()
    if x.shape[0] != p.gamma.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, norm expects {p.gamma.shape[0]}")
    axes = tuple(range(1, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
    shape = (-1,) + (1,) * (x.ndim - 1)
    return p.gamma.reshape(shape) * (x - mean) / np.sqrt(var + p.eps) + p.beta.reshape(shape)


def _avg_pool_axis(x: np.ndarray, axis: int, k: int, s: int) -> np.ndarray:
    n = x.shape[axis]
    count = -(-max(n - k, 0) // s) + 1
    xm = np.moveaxis(x, axis, 0)
    out = np.empty((count,) + xm.shape[1:])
    for i in range(count):
        lo = i * s
        win = xm[lo:min(lo + k, n)]
        # Anchored mean keeps a constant window exactly constant.
        anchor = win[0]
        out[i] = anchor + (win - anchor).sum(axis=0) / win.shape[0]
    return np.moveaxis(out, 0, axis)


def _max_pool_axis(x: np.ndarray, axis: int, k: int, s: int) -> np.ndarray:
    n = x.shape[axis]
    count = (n - k) // s + 1
    xm = np.moveaxis(x, axis, 0)
    out = xm[0:s * (count - 1) + 1:s].copy()
    for j in range(1, k):
        np.maximum(out, xm[j:j + s * (count - 1) + 1:s], out=out)
    return np.moveaxis(out, 0, axis)


def pool(x: np.ndarray, kind: str, kernel: Sequence[int], stride: Optional[Sequence[int]] = None) -> np.ndarray:
    """Max or average pooling over the trailing axes of ``x``.

    ``kernel`` and ``stride`` name the last ``len(kernel)`` axes. Average pooling
    admits a ragged trailing window (divided by its true size); max pooling drops it.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = tuple(int(k) for k in kernel)
    stride = kernel if stride is None else tuple(int(s) for s in stride)
    if len(kernel) != len(stride) or len(kernel) > x.ndim:
        raise ShapeError("kernel/stride rank does not match input")
    offset = x.ndim - len(kernel)
    for i, k in enumerate(kernel):
        if k < 1 or stride[i] < 1:
            raise ShapeError("pool kernel and stride must be positive")
        if k > x.shape[offset + i]:
            raise ShapeError(f"pool kernel {kernel} larger than input extents {x.shape[offset:]}")
    if kind == "avg":
        fn = _avg_pool_axis
    elif kind == "max":
        fn = _max_pool_axis
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    y = x
    for i, (k, s) in enumerate(zip(kernel, stride)):
        if k == 1 and s == 1:
            continue
        y = fn(y, offset + i, k, s)
    return y


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def linear(x: np.ndarray, p: LinearParams) -> np.ndarray:
    """Apply ``p`` along the channel (first) axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != p.weight.shape[1]:
        raise ShapeError(f"input has {x.shape[0]} channels, linear map expects {p.weight.shape[1]}")
    y = np.tensordot(p.weight, x, axes=(1, 0))
    if p.bias is not None:
        y += p.bias.reshape((-1,) + (1,) * (x.ndim - 1))
    return y


@dataclass
class Initializer:
    """Seeded Glorot-uniform weight source."""

    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def uniform(self, shape, fan_in: int, fan_out: int) -> np.ndarray:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-a, a, size=shape)

    def conv(self, cout: int, cin: int, kernel, *, stride=1, padding=0, groups=1, bias=True, theta=0.0) -> ConvParams:
        kernel = _triple(kernel)
        vol = int(np.prod(kernel))
        fan_in = cin // groups * vol
        fan_out = cout // groups * vol
        w = self.uniform((cout, cin // groups) + kernel, fan_in, fan_out)
        b = np.zeros(cout) if bias else None
        return ConvParams(w, b, stride=stride, padding=padding, groups=groups, theta=theta)

    def linear(self, cout: int, cin: int, bias: bool = True) -> LinearParams:
        return LinearParams(self.uniform((cout, cin), cin, cout), np.zeros(cout) if bias else None)
