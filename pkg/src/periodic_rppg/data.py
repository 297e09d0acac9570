"""Synthetic rPPG clips, clip/BVP file formats, cropping and augmentation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

MIN_FRAMES = 5


@dataclass
class VideoClip:
    """RGB frames stored planar as ``(3, T, H, W)`` with values in [0, 255]."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[0] != 3:
            raise ValueError(f"clip frames must be (3, T, H, W), got {self.frames.shape}")
        if self.frames.shape[1] < MIN_FRAMES:
            raise ValueError(f"clip needs at least {MIN_FRAMES} frames, got {self.frames.shape[1]}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def hw(self) -> Tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]


@dataclass
class BvpSignal:
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 2:
            raise ValueError("a BVP signal needs at least 2 samples")
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.fs


@dataclass
class SyntheticSceneSpec:
    """Parameters of a synthetic face-like clip with a known pulse.

    ``hr_bpm`` may be a scalar or a per-frame trajectory (HR drift).
    """

    T: int = 160
    H: int = 72
    W: int = 72
    fps: float = 30.0
    hr_bpm: Union[float, Sequence[float]] = 72.0
    pulse_amplitude: float = 2.0
    channel_weights: Tuple[float, float, float] = (0.33, 0.77, 0.53)
    noise_sigma: float = 1.0
    motion_amplitude_px: float = 0.0
    motion_hz: float = 0.3
    harmonic_phase: float = 0.6
    skin_rgb: Tuple[float, float, float] = (190.0, 140.0, 115.0)
    background_rgb: Tuple[float, float, float] = (60.0, 65.0, 70.0)
    seed: int = 0

    def __post_init__(self):
        hr = np.atleast_1d(np.asarray(self.hr_bpm, dtype=np.float64))
        if hr.size not in (1, self.T):
            raise ValueError("hr_bpm trajectory must have one value per frame")
        if hr.min() < 40 or hr.max() > 180:
            raise ValueError("hr_bpm must stay within [40, 180]")
        if min(self.pulse_amplitude, self.noise_sigma, self.motion_amplitude_px) < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.T < MIN_FRAMES or self.fps <= 0:
            raise ValueError("need at least 5 frames and positive fps")


def synthetic_bvp(spec: SyntheticSceneSpec) -> np.ndarray:
    """Noise-free pulse ``sin(phase) + 0.3 sin(2 phase + harmonic_phase)``."""
    hr = np.broadcast_to(np.atleast_1d(np.asarray(spec.hr_bpm, dtype=np.float64)), (spec.T,))
    f = hr / 60.0
    # phase integrates instantaneous frequency; constant HR reduces to 2*pi*f*t
    phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(f[:-1])]) / spec.fps
    return np.sin(phase) + 0.3 * np.sin(2 * phase + spec.harmonic_phase)


def skin_mask(spec: SyntheticSceneSpec, frame: int = 0) -> np.ndarray:
    """Boolean ``(H, W)`` mask of the elliptical skin region at ``frame``."""
    cy, cx = (spec.H - 1) / 2.0, (spec.W - 1) / 2.0
    cx = cx + spec.motion_amplitude_px * np.sin(2 * np.pi * spec.motion_hz * frame / spec.fps)
    ry, rx = 0.38 * spec.H, 0.3 * spec.W
    yy, xx = np.mgrid[0:spec.H, 0:spec.W]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def generate_synthetic_clip(spec: SyntheticSceneSpec) -> Tuple[VideoClip, BvpSignal]:
    rng = np.random.default_rng(spec.seed)
    bvp = synthetic_bvp(spec)
    frames = np.empty((3, spec.T, spec.H, spec.W))
    skin = np.asarray(spec.skin_rgb, dtype=np.float64)
    bg = np.asarray(spec.background_rgb, dtype=np.float64)
    weights = np.asarray(spec.channel_weights, dtype=np.float64)
    static = spec.motion_amplitude_px == 0
    mask = skin_mask(spec)
    for t in range(spec.T):
        if not static:
            mask = skin_mask(spec, t)
        color = skin + spec.pulse_amplitude * bvp[t] * weights
        for ch in range(3):
            frames[ch, t] = np.where(mask, color[ch], bg[ch])
    if spec.noise_sigma > 0:
        frames += rng.normal(0.0, spec.noise_sigma, size=frames.shape) * skin_mask_volume(spec)
    np.clip(frames, 0.0, 255.0, out=frames)
    return VideoClip(frames, spec.fps), BvpSignal(bvp, spec.fps)


def skin_mask_volume(spec: SyntheticSceneSpec) -> np.ndarray:
    if spec.motion_amplitude_px == 0:
        return np.broadcast_to(skin_mask(spec), (spec.T, spec.H, spec.W))
    return np.stack([skin_mask(spec, t) for t in range(spec.T)])


# --------------------------------------------------------------------------
# cropping


def _bilinear_axis(size: int, start: float, length: float, out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = length / out
    src = start + (np.arange(out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, size - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, src - i0


def crop_window(clip: VideoClip, box: Sequence[float], out_hw: Tuple[int, int]) -> VideoClip:
    """Crop ``box = (top, left, height, width)`` from every frame and resize bilinearly.

    Pixel centers sit at half-integer positions, so a full-frame box resized to
    its own size is the identity and pixel-aligned crops compose exactly.
    """
    top, left, bh, bw = (float(v) for v in box)
    H, W = clip.hw
    if bh <= 0 or bw <= 0 or top < 0 or left < 0 or top + bh > H + 1e-9 or left + bw > W + 1e-9:
        raise ValueError(f"crop box {tuple(box)} falls outside the {H}x{W} frame")
    oh, ow = (int(v) for v in out_hw)
    if oh < 1 or ow < 1:
        raise ValueError("output size must be positive")
    y0, y1, fy = _bilinear_axis(H, top, bh, oh)
    x0, x1, fx = _bilinear_axis(W, left, bw, ow)
    f = clip.frames
    rows0 = f[:, :, y0, :]
    rows1 = f[:, :, y1, :]
    fy = fy[:, None]
    top_row = rows0[..., x0] * (1 - fx) + rows0[..., x1] * fx
    bot_row = rows1[..., x0] * (1 - fx) + rows1[..., x1] * fx
    return VideoClip(top_row * (1 - fy) + bot_row * fy, clip.fps)


# --------------------------------------------------------------------------
# augmentation


def _upsample_linear(x: np.ndarray, factor: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    pos = np.arange((n - 1) * factor + 1) / factor
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    w = pos - i0
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = -1
    w = w.reshape(shape)
    return a * (1 - w) + b * w


def augment_temporal_resample(
    clip: VideoClip,
    bvp: BvpSignal,
    gt_hr: float,
    rng: np.random.Generator,
    down_factors: Sequence[int] = (2,),
    up_factors: Sequence[int] = (2,),
    high_bpm: float = 90.0,
    low_bpm: float = 75.0,
) -> Tuple[VideoClip, BvpSignal]:
    """Rebalance the HR distribution by resampling clip and label together.

    Above ``high_bpm`` the pair is decimated, below ``low_bpm`` it is linearly
    interpolated; the sampling rate metadata is kept, so the apparent HR of the
    augmented pair scales with the factor.
    """
    if bvp.samples.size != clip.num_frames:
        raise ValueError("clip and BVP must have the same length")
    if gt_hr > high_bpm:
        k = int(rng.choice(down_factors))
        frames = clip.frames[:, ::k]
        samples = bvp.samples[::k]
    elif gt_hr < low_bpm:
        k = int(rng.choice(up_factors))
        frames = _upsample_linear(clip.frames, k, axis=1)
        samples = _upsample_linear(bvp.samples, k, axis=0)
    else:
        return clip, bvp
    return VideoClip(frames, clip.fps), BvpSignal(samples, bvp.fs)


def augment_hflip(clip: VideoClip, rng: Optional[np.random.Generator] = None, force: Optional[bool] = None) -> VideoClip:
    """Mirror every frame left-right with probability 0.5 (or per ``force``)."""
    flip = force if force is not None else bool(rng.random() < 0.5)
    if not flip:
        return clip
    return VideoClip(clip.frames[..., ::-1].copy(), clip.fps)


# --------------------------------------------------------------------------
# file formats

_DTYPES = {"float64": "<f8", "float32": "<f4", "uint8": "u1"}


def save_clip(clip: VideoClip, path: Union[str, Path], dtype: str = "float64") -> Path:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (planar little-endian data)."""
    path = Path(path)
    header_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    header = {
        "shape": list(clip.frames.shape),
        "layout": "CTHW",
        "fps": float(clip.fps),
        "dtype": dtype,
        "endianness": "little",
        "data": blob_path.name,
    }
    data = clip.frames
    if dtype == "uint8":
        data = np.clip(np.rint(data), 0, 255)
    blob_path.write_bytes(np.ascontiguousarray(data, dtype=_DTYPES[dtype]).tobytes())
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header_path


def load_clip(path: Union[str, Path]) -> VideoClip:
    """Read a clip given its ``.json`` header (or the shared stem)."""
    header_path = Path(path)
    if header_path.suffix != ".json":
        header_path = header_path.with_suffix(".json")
    header = json.loads(header_path.read_text())
    if header.get("layout", "CTHW") != "CTHW":
        raise ValueError(f"unsupported clip layout {header['layout']!r}")
    if header.get("endianness", "little") != "little":
        raise ValueError("clip data must be little-endian")
    dtype = header["dtype"]
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported clip dtype {dtype!r}")
    shape = tuple(int(v) for v in header["shape"])
    raw = (header_path.parent / header["data"]).read_bytes()
    data = np.frombuffer(raw, dtype=_DTYPES[dtype])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"clip blob holds {data.size} values, header declares {shape}")
    if len(shape) != 4 or shape[1] < MIN_FRAMES:
        raise ValueError(f"clip must be (3, T>={MIN_FRAMES}, H, W), got {shape}")
    return VideoClip(data.reshape(shape).astype(np.float64), float(header["fps"]))


def save_bvp(bvp: BvpSignal, path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "value"])
        for t, v in zip(bvp.times, bvp.samples):
            w.writerow([repr(float(t)), repr(float(v))])
    return path


def load_bvp(path: Union[str, Path], fs: Optional[float] = None) -> BvpSignal:
    """Read a two-column ``time_s,value`` CSV; ``fs`` defaults to the time step."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:2]] != ["time_s", "value"]:
        raise ValueError(f"{path}: BVP CSV must start with a 'time_s,value' header")
    body = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=np.float64)
    if body.shape[0] < 2:
        raise ValueError(f"{path}: need at least 2 samples")
    if fs is None:
        dt = np.diff(body[:, 0])
        fs = 1.0 / float(np.median(dt))
        fs = float(np.round(fs, 9))
    return BvpSignal(body[:, 1], fs)

