"""Hierarchical temporal periodic transformer: blocks, full model, cost summary."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .attention import AttentionConfig, AttentionParams, RegionGrid, mhsa_forward, region_windows
from .data import BvpSignal, VideoClip
from .numerics import (
    ConvParams,
    Initializer,
    LinearParams,
    NormParams,
    ShapeError,
    batch_norm,
    conv3d,
    conv_transpose_temporal,
    gelu,
    linear,
    out_extent,
)
from .stem import PatchEmbedParams, StemParams, fusion_stem_forward, patch_embed


@dataclass
class ModelConfig:
    channels: int = 64
    stem_channels: int = 32
    heads: int = 4
    topk: object = None
    partition: int = 2
    tdc_theta: float = 0.7
    ff_ratio: int = 2
    head_hidden: Optional[int] = None
    schedule: Tuple[int, ...] = (1, 2, 3)
    alpha: float = 0.5
    beta: float = 0.5
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.schedule = tuple(int(n) for n in self.schedule)
        if not self.schedule:
            raise ValueError("stage schedule must not be empty")
        if min(self.schedule) < 0:
            raise ValueError("sampling coefficients must be non-negative")
        if self.ff_ratio < 1:
            raise ValueError("feed-forward ratio must be at least 1")
        self.attention  # validates heads/topk/theta

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.channels, self.heads, self.topk, self.partition, self.tdc_theta)

    @property
    def hidden(self) -> int:
        return self.head_hidden or self.channels // 2


@dataclass
class UpsampleParams:
    """Learned temporal transposed conv, ``weight`` is ``(C_in, C_out, 2, 1, 1)``."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None


@dataclass
class FeedForwardParams:
    fc1: LinearParams
    hidden: ConvParams
    hidden_norm: NormParams
    fc2: LinearParams

    @classmethod
    def init(cls, init: Initializer, channels: int, ratio: int, eps: float = 1e-5):
        wide = channels * ratio
        return cls(
            init.linear(wide, channels),
            init.conv(wide, wide, 3, padding=1, groups=wide),
            NormParams.unit(wide, eps),
            init.linear(channels, wide),
        )


@dataclass
class TptBlockParams:
    n: int
    down: List[Tuple[NormParams, ConvParams]]
    attn_norm: NormParams
    attn: AttentionParams
    ff_norm: NormParams
    ff: FeedForwardParams
    up: List[UpsampleParams]

    @classmethod
    def init(cls, init: Initializer, cfg: ModelConfig, n: int) -> "TptBlockParams":
        C, eps = cfg.channels, cfg.bn_eps
        down = [(NormParams.unit(C, eps), init.conv(C, C, (2, 1, 1), stride=(2, 1, 1))) for _ in range(n)]
        up = []
        for _ in range(n):
            conv = init.conv(C, C, (2, 1, 1))
            up.append(UpsampleParams(conv.weight, conv.bias))
        return cls(
            n=n,
            down=down,
            attn_norm=NormParams.unit(C, eps),
            attn=AttentionParams.init(init, cfg.attention),
            ff_norm=NormParams.unit(C, eps),
            ff=FeedForwardParams.init(init, C, cfg.ff_ratio, eps),
            up=up,
        )


@dataclass
class HeadParams:
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class ModelParams:
    stem: StemParams
    embed: PatchEmbedParams
    blocks: List[TptBlockParams]
    head: HeadParams


def init_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    init = Initializer(seed)
    C = cfg.channels
    return ModelParams(
        stem=StemParams.init(init, cfg.stem_channels, C, cfg.alpha, cfg.beta, cfg.bn_eps),
        embed=PatchEmbedParams.init(init, C),
        blocks=[TptBlockParams.init(init, cfg, n) for n in cfg.schedule],
        head=HeadParams(init.linear(cfg.hidden, C), init.linear(1, cfg.hidden)),
    )


def named_arrays(obj, prefix: str = "") -> Iterator[Tuple[str, object, str]]:
    """Yield ``(name, owner, attribute)`` for every weight array, in a stable order."""
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(val, np.ndarray):
                yield name, obj, f.name
            elif dataclasses.is_dataclass(val) or isinstance(val, (list, tuple)):
                yield from named_arrays(val, name + ".")
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_arrays(item, f"{prefix}{i}.")


def parameter_count(params) -> int:
    return sum(getattr(owner, attr).size for _, owner, attr in named_arrays(params))


# --------------------------------------------------------------------------
# layers


def temporal_downsample(x: np.ndarray, norm: NormParams, conv: ConvParams) -> np.ndarray:
    """Normalize, then halve time with a non-overlapping ``(2, 1, 1)`` convolution."""
    if x.shape[1] % 2:
        raise ShapeError(f"temporal downsampling needs an even length, got {x.shape[1]}")
    return conv3d(batch_norm(x, norm), conv)


def temporal_upsample(x: np.ndarray, p: UpsampleParams) -> np.ndarray:
    return conv_transpose_temporal(x, p.weight, p.bias)


def feed_forward(x: np.ndarray, p: FeedForwardParams, bypass_gelu: bool = False) -> np.ndarray:
    """Pointwise expand, depthwise 3x3x3 conv + BN + GELU, pointwise contract."""
    h = linear(x, p.fc1)
    h = batch_norm(conv3d(h, p.hidden), p.hidden_norm)
    if not bypass_gelu:
        h = gelu(h)
    return linear(h, p.fc2)


def tpt_block_forward(x: np.ndarray, p: TptBlockParams, cfg: ModelConfig, trace: Optional[dict] = None) -> np.ndarray:
    """Shape-preserving block: downsample, attend, feed forward, upsample, add input."""
    T = x.shape[1]
    if T % (2 ** p.n):
        raise ShapeError(f"block with n={p.n} needs T divisible by {2 ** p.n}, got {T}")
    y = x
    for norm, conv in p.down:
        y = temporal_downsample(y, norm, conv)
    y = y + mhsa_forward(batch_norm(y, p.attn_norm), cfg.attention, p.attn, p.n, trace=trace)
    y = y + feed_forward(batch_norm(y, p.ff_norm), p.ff)
    for up in p.up:
        y = temporal_upsample(y, up)
    return x + y


def predictor_head(x: np.ndarray, p: HeadParams) -> np.ndarray:
    """Spatial mean per frame, then a two-layer MLP to one value per frame."""
    h = x.mean(axis=(2, 3))  # (C, T)
    return linear(gelu(linear(h, p.fc1)), p.fc2)[0]


def check_input(shape: Sequence[int], cfg: ModelConfig) -> None:
    _, T, H, W = shape
    if H % 16 or W % 16:
        raise ShapeError(f"model input needs H and W divisible by 16, got {H}x{W}")
    need = 2 ** max(cfg.schedule)
    if T % need:
        raise ShapeError(f"schedule {cfg.schedule} needs T divisible by {need}, got {T}")


def model_forward(clip: VideoClip, cfg: ModelConfig, params: ModelParams, traces: Optional[List[dict]] = None) -> BvpSignal:
    """Predict a BVP with one sample per input frame.

    ``traces``, if given, receives one dict of attention intermediates per stage.
    """
    check_input(clip.frames.shape, cfg)
    x = patch_embed(fusion_stem_forward(clip, params.stem), params.embed)
    for block in params.blocks:
        tr = {} if traces is not None else None
        x = tpt_block_forward(x, block, cfg, trace=tr)
        if traces is not None:
            traces.append(tr)
    return BvpSignal(predictor_head(x, params.head), clip.fps)


# --------------------------------------------------------------------------
# cost accounting


@dataclass
class ModelSummary:
    params: int
    macs: int
    input_shape: Tuple[int, int, int, int]
    layers: List[Tuple[str, int, int]] = field(default_factory=list)  # (name, params, macs)

    def as_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "params": self.params,
            "params_M": round(self.params / 1e6, 6),
            "macs": self.macs,
            "macs_G": round(self.macs / 1e9, 6),
            "layers": [{"name": n, "params": p, "macs": m} for n, p, m in self.layers],
        }


def conv_macs(out_shape: Sequence[int], p: ConvParams) -> int:
    return int(np.prod(out_shape)) * p.weight.shape[1] * int(np.prod(p.kernel))


def _out_shape(shape, p: ConvParams):
    return (p.out_channels,) + tuple(out_extent(n, k, s, q) for n, k, s, q in zip(shape[1:], p.kernel, p.stride, p.padding))


def attention_macs(cfg: ModelConfig, shape: Sequence[int], n: int) -> Tuple[int, dict]:
    """MACs of one attention layer on a ``(C, T, S, S')`` input.

    The routed key count per query assumes routed regions of mean size, which is
    exact whenever the region grid divides the token grid.
    """
    C, T, S, S2 = shape
    N = T * S * S2
    grid = RegionGrid((T, S, S2), region_windows(T, S, S2, cfg.partition, n))
    R = grid.region_count
    k = cfg.attention.resolve_topk(R)
    keys = k * N / R
    parts = {
        "qk_tdc": 2 * (N * C * C * 27 + N * C * C),
        "v_proj": N * C * C,
        "pre_attention": R * R * C,
        "refined": int(round(2 * N * keys * C)),
        "lce": N * C * 27,
        "out_proj": N * C * C,
    }
    return sum(parts.values()), parts


def model_summary(cfg: ModelConfig, input_shape: Sequence[int]) -> ModelSummary:
    """Exact parameter count and closed-form MAC count for ``input_shape``.

    ``input_shape`` is ``(3, T, H, W)`` or ``(T, H, W)``.
    """
    shape = tuple(int(v) for v in input_shape)
    if len(shape) == 3:
        shape = (3,) + shape
    check_input(shape, cfg)
    params = init_model(cfg, seed=0)
    layers: List[Tuple[str, int, int]] = []
    _, T, H, W = shape
    C = cfg.channels

    st = params.stem
    s1_out = (cfg.stem_channels, T, H // 2, W // 2)
    raw = conv_macs(s1_out, st.slab("raw"))
    diff = conv_macs(s1_out, st.slab("diff"))
    s2_out = (C, T, H // 4, W // 4)
    s2 = 2 * conv_macs(s2_out, st.stem2)
    layers.append(("stem", parameter_count(st), raw + diff + s2))

    tok = (C, T, H // 16, W // 16)
    layers.append(("patch_embed", parameter_count(params.embed), conv_macs(tok, params.embed.proj)))

    for i, (n, block) in enumerate(zip(cfg.schedule, params.blocks)):
        macs = 0
        cur = tok
        for _, conv in block.down:
            cur = _out_shape(cur, conv)
            macs += conv_macs(cur, conv)
        a, _ = attention_macs(cfg, cur, n)
        macs += a
        Nt = int(np.prod(cur[1:]))
        wide = C * cfg.ff_ratio
        macs += Nt * C * wide * 2 + Nt * wide * 27
        for _ in block.up:
            cur = (C, cur[1] * 2) + tuple(cur[2:])
            macs += int(np.prod(cur)) * C
        layers.append((f"block{i}(n={n})", parameter_count(block), macs))

    head_macs = T * (C * cfg.hidden + cfg.hidden)
    layers.append(("head", parameter_count(params.head), head_macs))
    return ModelSummary(
        params=sum(l[1] for l in layers),
        macs=sum(l[2] for l in layers),
        input_shape=shape,
        layers=layers,
    )
