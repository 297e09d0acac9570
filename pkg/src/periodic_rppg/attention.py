"""Periodic sparse attention over a spatio-temporal token grid.

Queries and keys come from temporal-difference convolutions, values from a
pointwise projection. Q and K are average-pooled into coarse regions; the
region-level scores choose, for every query region, the ``k`` key regions
whose tokens that region's queries may attend to. A depthwise 3x3x3 local
context term computed on V is added to the attention output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .numerics import (
    ConvParams,
    Initializer,
    LinearParams,
    ShapeError,
    conv3d,
    linear,
    pool,
    softmax,
)

TopK = Union[int, str, None]


@dataclass
class AttentionConfig:
    channels: int = 64
    heads: int = 4
    topk: TopK = None  # None -> ceil(regions / 4); "all" -> dense
    partition: int = 2
    tdc_theta: float = 0.7

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if isinstance(self.topk, int) and self.topk < 1:
            raise ValueError("topk must be at least 1")
        if isinstance(self.topk, str) and self.topk != "all":
            raise ValueError(f"topk must be an int, 'all' or None, got {self.topk!r}")
        if not 0.0 <= self.tdc_theta <= 1.0:
            raise ValueError("tdc_theta must lie in [0, 1]")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def resolve_topk(self, regions: int) -> int:
        if self.topk is None:
            return math.ceil(regions / 4)
        if self.topk == "all":
            return regions
        return int(self.topk)


@dataclass
class AttentionParams:
    q: ConvParams
    k: ConvParams
    v: LinearParams
    lce: ConvParams
    proj: LinearParams

    @classmethod
    def init(cls, init: Initializer, cfg: AttentionConfig) -> "AttentionParams":
        C = cfg.channels
        return cls(
            q=init.conv(C, C, 3, padding=1, bias=False, theta=cfg.tdc_theta),
            k=init.conv(C, C, 3, padding=1, bias=False, theta=cfg.tdc_theta),
            v=init.linear(C, C),
            lce=init.conv(C, C, 3, padding=1, groups=C),
            proj=init.linear(C, C),
        )


@dataclass(frozen=True)
class RegionGrid:
    """Partition of a ``(T, S, S')`` token grid into box-shaped regions.

    Tokens are numbered row-major over ``(t, h, w)``; regions likewise over the
    region grid. Trailing regions along an axis may be smaller than ``window``.
    """

    token_shape: Tuple[int, int, int]
    window: Tuple[int, int, int]

    @property
    def counts(self) -> Tuple[int, int, int]:
        return tuple(-(-n // w) for n, w in zip(self.token_shape, self.window))  # type: ignore[return-value]

    @property
    def region_count(self) -> int:
        return int(np.prod(self.counts))

    @property
    def token_count(self) -> int:
        return int(np.prod(self.token_shape))

    def region_of_token(self) -> np.ndarray:
        T, S, S2 = self.token_shape
        t, h, w = np.meshgrid(np.arange(T), np.arange(S), np.arange(S2), indexing="ij")
        nT, nH, nW = self.counts
        wt, wh, ww = self.window
        return ((t // wt) * nH + h // wh) * nW + (w // ww)

    def tokens(self) -> List[np.ndarray]:
        """Token indices belonging to each region, in region order."""
        owner = self.region_of_token().reshape(-1)
        order = np.argsort(owner, kind="stable")
        bounds = np.searchsorted(owner[order], np.arange(self.region_count + 1))
        return [order[bounds[r]:bounds[r + 1]] for r in range(self.region_count)]


def tdc_project(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """3x3x3 convolution plus a theta-weighted temporal-difference term.

    The extra term subtracts ``theta * x(p0) * sum(w)`` over the taps in the
    previous and next frames, i.e. it turns those taps into differences against
    the centre voxel.
    """
    if p.kernel != (3, 3, 3) or p.stride != (1, 1, 1) or p.padding != (1, 1, 1) or p.groups != 1:
        raise ShapeError("temporal difference projection needs a dense 3x3x3 kernel, stride 1, padding 1")
    y = conv3d(x, p)
    if p.theta == 0:
        return y
    kernel_diff = p.weight[:, :, 0].sum(axis=(2, 3)) + p.weight[:, :, 2].sum(axis=(2, 3))
    return y - p.theta * np.tensordot(kernel_diff, np.asarray(x, dtype=np.float64), axes=(1, 0))


def region_windows(T_ds: int, S: int, S2: int, partition: int, n: int) -> Tuple[int, int, int]:
    """Pooling window per axis: ``(floor(T_ds / T_s), floor(S / 4), floor(S' / 4))``."""
    T_s = max(2 ** partition, 2 ** n)
    window = (T_ds // T_s, S // 4, S2 // 4)
    if window[0] < 1:
        raise ShapeError(f"temporal length {T_ds} is too short for {T_s} temporal regions")
    if window[1] < 1 or window[2] < 1:
        raise ShapeError(f"token grid {S}x{S2} is smaller than the 4x4 region grid")
    return window


def region_pool(x: np.ndarray, partition: int, n: int) -> Tuple[np.ndarray, RegionGrid]:
    """Average-pool a ``(C, T_ds, S, S')`` volume into regions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"region_pool expects (C, T, S, S'), got {x.shape}")
    window = region_windows(*x.shape[1:], partition, n)
    grid = RegionGrid(tuple(x.shape[1:]), window)
    return pool(x, "avg", window, window), grid


def _as_region_matrix(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 2:
        return p
    return p.reshape(p.shape[0], -1).T


def pre_attention_scores(q_pooled: np.ndarray, k_pooled: np.ndarray) -> np.ndarray:
    """Raw region-to-region dot products (no scaling, no softmax).

    Accepts pooled ``(C, nT, nH, nW)`` volumes or ``(regions, C)`` matrices.
    """
    q = _as_region_matrix(q_pooled)
    k = _as_region_matrix(k_pooled)
    if q.shape[1] != k.shape[1]:
        raise ShapeError("query and key regions have different widths")
    return q @ k.T


def topk_route(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best key regions per query region, best first.

    Equal scores are ordered by lower index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeError("scores must be a (query regions, key regions) matrix")
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"top-k of {k} is invalid for {scores.shape[1]} regions")
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    C = x.shape[0]
    return x.reshape(heads, C // heads, -1).transpose(0, 2, 1)  # (h, N, d)


def _check_routing(q: np.ndarray, routes: np.ndarray, grid: RegionGrid) -> None:
    if tuple(q.shape[1:]) != tuple(grid.token_shape):
        raise ShapeError(f"token grid {q.shape[1:]} does not match region grid {grid.token_shape}")
    routes = np.asarray(routes)
    if routes.ndim != 2 or routes.shape[0] != grid.region_count:
        raise ShapeError(f"routing table {routes.shape} does not cover {grid.region_count} query regions")
    if routes.size and (routes.min() < 0 or routes.max() >= grid.region_count):
        raise ShapeError("routing table refers to regions outside the grid")


def _region_attention(qh, kh, vh, q_idx, kv_idx, scale):
    """Softmax weights ``(h, nq, nk)`` and outputs ``(h, nq, d)`` for one query region."""
    s = np.matmul(qh[:, q_idx], kh[:, kv_idx].transpose(0, 2, 1)) * scale
    w = softmax(s, axis=-1)
    return w, np.matmul(w, vh[:, kv_idx])


def refined_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    routes: np.ndarray,
    grid: RegionGrid,
    lce: Optional[ConvParams],
    heads: int,
) -> np.ndarray:
    """Token-level attention restricted to routed regions, plus local context.

    ``q``, ``k``, ``v`` are ``(C, T, S, S')`` volumes whose channels are split
    into ``heads`` contiguous groups; the result has the same layout.
    """
    _check_routing(q, routes, grid)
    C = q.shape[0]
    if C % heads:
        raise ShapeError("channels must be divisible by heads")
    scale = 1.0 / math.sqrt(C // heads)
    qh, kh, vh = (_split_heads(a, heads) for a in (q, k, v))
    members = grid.tokens()
    out = np.zeros_like(qh)
    for r, q_idx in enumerate(members):
        kv_idx = np.concatenate([members[j] for j in routes[r]])
        _, o = _region_attention(qh, kh, vh, q_idx, kv_idx, scale)
        out[:, q_idx] = o
    y = out.transpose(0, 2, 1).reshape(q.shape)
    if lce is not None:
        y = y + conv3d(v, lce)
    return y


def attention_weights(q: np.ndarray, k: np.ndarray, routes: np.ndarray, grid: RegionGrid, heads: int, token: int) -> np.ndarray:
    """Full ``(heads, N)`` refined-attention weight row of one query token.

    Keys outside the routed regions get weight zero.
    """
    _check_routing(q, routes, grid)
    N = grid.token_count
    if not 0 <= token < N:
        raise IndexError(f"query token {token} outside [0, {N})")
    C = q.shape[0]
    qh, kh = _split_heads(q, heads), _split_heads(k, heads)
    members = grid.tokens()
    r = int(grid.region_of_token().reshape(-1)[token])
    kv_idx = np.concatenate([members[j] for j in routes[r]])
    s = np.einsum("hd,hkd->hk", qh[:, token], kh[:, kv_idx]) * (1.0 / math.sqrt(C // heads))
    row = np.zeros((heads, N))
    row[:, kv_idx] = softmax(s, axis=-1)
    return row


def mhsa_forward(x: np.ndarray, cfg: AttentionConfig, p: AttentionParams, n: int, trace: Optional[dict] = None) -> np.ndarray:
    """Multi-head periodic sparse attention on a ``(C, T_ds, S, S')`` volume.

    One routing table, computed from full-width pooled features, is shared by
    all heads. If ``trace`` is a dict it receives the intermediates.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] != cfg.channels:
        raise ShapeError(f"attention expects ({cfg.channels}, T, S, S'), got {x.shape}")
    q = tdc_project(x, p.q)
    k = tdc_project(x, p.k)
    v = linear(x, p.v)
    q_pooled, grid = region_pool(q, cfg.partition, n)
    k_pooled, _ = region_pool(k, cfg.partition, n)
    scores = pre_attention_scores(q_pooled, k_pooled)
    routes = topk_route(scores, cfg.resolve_topk(grid.region_count))
    attn = refined_attention(q, k, v, routes, grid, p.lce, cfg.heads)
    out = linear(attn, p.proj)
    if trace is not None:
        trace.update(q=q, k=k, v=v, q_pooled=q_pooled, k_pooled=k_pooled, grid=grid, scores=scores, routes=routes, attn=attn)
    return out
