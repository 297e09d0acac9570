"""Fusion stem (difference frames fused into raw frames) and patch embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MIN_FRAMES, VideoClip
from .numerics import ConvParams, Initializer, NormParams, ShapeError, batch_norm, conv3d, pool, relu

RAW_CHANNELS = 3
DIFF_CHANNELS = 12


@dataclass
class StemParams:
    """Two-level stem.

    ``stem1`` holds a single ``(C1, 15, 1, 5, 5)`` kernel: input channels 0-2 are
    the raw-frame slab, channels 3-14 the difference-frame slab. Bias and
    normalization are shared by both paths. ``stem2`` is shared by both of its
    applications.
    """

    stem1: ConvParams
    norm1: NormParams
    stem2: ConvParams
    norm2: NormParams
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("fusion coefficients must lie in [0, 1]")
        if self.stem1.in_channels != RAW_CHANNELS + DIFF_CHANNELS:
            raise ShapeError("stem1 kernel must carry 3 raw + 12 difference input channels")

    def slab(self, which: str) -> ConvParams:
        lo, hi = (0, RAW_CHANNELS) if which == "raw" else (RAW_CHANNELS, RAW_CHANNELS + DIFF_CHANNELS)
        p = self.stem1
        return ConvParams(p.weight[:, lo:hi], p.bias, stride=p.stride, padding=p.padding)

    @classmethod
    def init(cls, init: Initializer, stem_channels: int = 32, channels: int = 64, alpha=0.5, beta=0.5, eps=1e-5):
        stem1 = init.conv(stem_channels, RAW_CHANNELS + DIFF_CHANNELS, (1, 5, 5), stride=(1, 2, 2), padding=(0, 2, 2))
        stem2 = init.conv(channels, stem_channels, (1, 3, 3), padding=(0, 1, 1))
        return cls(stem1, NormParams.unit(stem_channels, eps), stem2, NormParams.unit(channels, eps), alpha, beta)


@dataclass
class PatchEmbedParams:
    proj: ConvParams

    def __post_init__(self):
        if self.proj.kernel != (1, 4, 4) or self.proj.stride != (1, 4, 4):
            raise ShapeError("patch embedding must be a non-overlapping 4x4 spatial projection")

    @classmethod
    def init(cls, init: Initializer, channels: int = 64):
        return cls(init.conv(channels, channels, (1, 4, 4), stride=(1, 4, 4)))


def difference_frames(clip: VideoClip) -> np.ndarray:
    """Consecutive-frame differences around each frame, stacked as 12 channels.

    Order is ``D-2, D-1, D1, D2`` (3 colour channels each). Time is padded by
    replicating the first and last frames, so differences that reach past the
    clip are zero.
    """
    x = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip, dtype=np.float64)
    T = x.shape[1]
    if T < MIN_FRAMES:
        raise ShapeError(f"difference frames need at least {MIN_FRAMES} frames, got {T}")
    xp = np.concatenate([x[:, :1], x[:, :1], x, x[:, -1:], x[:, -1:]], axis=1)
    # xp[:, t + 2] == X_t
    shifted = [xp[:, i:i + T] for i in range(5)]  # X_{t-2} .. X_{t+2}
    diffs = [shifted[i + 1] - shifted[i] for i in range(4)]
    return np.concatenate(diffs, axis=0)


def _stem1(x: np.ndarray, p: StemParams, which: str, probe: bool) -> np.ndarray:
    y = conv3d(x, p.slab(which))
    if not probe:
        y = relu(batch_norm(y, p.norm1))
    return pool(y, "max", (2, 2), (2, 2))


def _stem2(x: np.ndarray, p: StemParams, probe: bool) -> np.ndarray:
    y = conv3d(x, p.stem2)
    if probe:
        return y
    return relu(batch_norm(y, p.norm2))


def fusion_stem_forward(clip: VideoClip, p: StemParams, probe: bool = False) -> np.ndarray:
    """Map a ``(3, T, H, W)`` clip to ``(C, T, H/4, W/4)`` fused features.

    ``probe=True`` bypasses every normalization and ReLU, leaving a map that is
    linear in the input when biases are zero.
    """
    H, W = clip.hw
    if H % 4 or W % 4:
        raise ShapeError(f"stem needs H and W divisible by 4, got {H}x{W}")
    x_origin = _stem1(clip.frames, p, "raw", probe)
    x_diff = _stem1(difference_frames(clip), p, "diff", probe)
    a, b = p.alpha, p.beta
    return a * _stem2(x_origin, p, probe) + b * _stem2(a * x_origin + b * x_diff, p, probe)


def patch_embed(x: np.ndarray, p: PatchEmbedParams) -> np.ndarray:
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ShapeError(f"patch embedding needs spatial extents divisible by 4, got {x.shape[2:]}")
    return conv3d(x, p.proj)
