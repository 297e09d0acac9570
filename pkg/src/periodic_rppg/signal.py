"""Post-processing and evaluation of BVP signals, plus classical baselines."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sps

from .data import BvpSignal, VideoClip

HR_BAND = (0.67, 3.0)


class MetricWarning(UserWarning):
    """A metric hit a degenerate case and returned a guarded value."""


@dataclass
class FilterSpec:
    band: Tuple[float, float] = (0.75, 2.5)
    fs: float = 30.0
    order: int = 2

    def __post_init__(self):
        lo, hi = self.band
        if not 0 < lo < hi < self.fs / 2:
            raise ValueError(f"filter band {self.band} must satisfy 0 < lo < hi < fs/2 = {self.fs / 2}")
        if self.order < 1:
            raise ValueError("filter order must be positive")


@dataclass
class WelchSpec:
    segment_len: int
    overlap: float = 0.5
    window: str = "hann"
    n_fft: int = 2048

    def __post_init__(self):
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        if self.n_fft < self.segment_len:
            raise ValueError("n_fft must be at least the segment length")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @classmethod
    def default(cls, n: int, fs: float) -> "WelchSpec":
        seg = int(min(n, round(10 * fs)))
        n_fft = max(2048, 1 << int(np.ceil(np.log2(seg))))
        return cls(seg, 0.5, "hann", n_fft)


@dataclass
class HrEstimate:
    bpm: float
    freqs: np.ndarray
    psd: np.ndarray


@dataclass
class HrMetrics:
    mae: float
    rmse: float
    mape: float
    pearson_rho: float
    snr_db: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Butterworth band-pass


def butter_bandpass_zpk(spec: FilterSpec):
    """Digital zeros, poles and gain of the Butterworth band-pass.

    Analog low-pass prototype -> band-pass transform -> bilinear transform, with
    the band edges prewarped so they land exactly on the requested frequencies.
    """
    N = spec.order
    fs = spec.fs
    k = np.arange(1, N + 1)
    proto = np.exp(1j * np.pi * (2 * k + N - 1) / (2 * N))  # unit-circle left half-plane poles
    w1, w2 = (2 * fs * np.tan(np.pi * f / fs) for f in spec.band)
    bw, w0 = w2 - w1, np.sqrt(w1 * w2)
    # s -> (s^2 + w0^2) / (bw s): each prototype pole p yields the two roots of s^2 - p bw s + w0^2
    half = proto * bw / 2
    disc = np.sqrt(half ** 2 - w0 ** 2)
    poles_a = np.concatenate([half + disc, half - disc])
    zeros_a = np.zeros(N)
    gain_a = bw ** N
    # bilinear map s = 2 fs (z - 1) / (z + 1)
    fs2 = 2 * fs
    poles = (fs2 + poles_a) / (fs2 - poles_a)
    zeros = np.concatenate([(fs2 + zeros_a) / (fs2 - zeros_a), -np.ones(N)])
    gain = gain_a * np.real(np.prod(fs2 - zeros_a) / np.prod(fs2 - poles_a))
    return zeros, poles, gain


def butter_bandpass_coeffs(spec: FilterSpec) -> Tuple[np.ndarray, np.ndarray]:
    z, p, k = butter_bandpass_zpk(spec)
    b = k * np.real(np.poly(z))
    a = np.real(np.poly(p))
    return b, a


def butterworth_bandpass(x: BvpSignal, spec: Optional[FilterSpec] = None) -> BvpSignal:
    """Zero-phase (forward-backward) Butterworth band-pass."""
    spec = spec or FilterSpec(fs=x.fs)
    if spec.fs != x.fs:
        raise ValueError("filter designed for a different sampling rate")
    if len(x) <= 3 * spec.order:
        raise ValueError(f"signal of {len(x)} samples too short for an order-{spec.order} filter")
    b, a = butter_bandpass_coeffs(spec)
    padlen = min(3 * max(len(a), len(b)), len(x) - 1)
    return BvpSignal(sps.filtfilt(b, a, x.samples, padlen=padlen), x.fs)


# --------------------------------------------------------------------------
# spectra and HR


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral averaging
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def welch_psd(x: BvpSignal, spec: Optional[WelchSpec] = None) -> Tuple[np.ndarray, np.ndarray]:
    """One-sided Welch PSD (power per Hz) of mean-removed Hann-windowed segments."""
    spec = spec or WelchSpec.default(len(x), x.fs)
    data = x.samples
    L = spec.segment_len
    if data.size < L:
        raise ValueError(f"signal of {data.size} samples shorter than the {L}-sample segment")
    step = max(1, int(round(L * (1 - spec.overlap))))
    starts = range(0, data.size - L + 1, step)
    win = _hann(L)
    acc = np.zeros(spec.n_fft // 2 + 1)
    for s in starts:
        seg = data[s:s + L]
        seg = seg - seg.mean()
        acc += np.abs(np.fft.rfft(seg * win, spec.n_fft)) ** 2
    psd = acc / len(starts) / (x.fs * (win ** 2).sum())
    # fold negative frequencies onto positive ones
    if spec.n_fft % 2:
        psd[1:] *= 2
    else:
        psd[1:-1] *= 2
    freqs = np.arange(psd.size) * x.fs / spec.n_fft
    return freqs, psd


def estimate_hr(x: BvpSignal, band: Sequence[float] = HR_BAND, spec: Optional[WelchSpec] = None) -> HrEstimate:
    freqs, psd = welch_psd(x, spec)
    lo, hi = band
    mask = (freqs >= lo) & (freqs <= hi)
    if not mask.any():
        raise ValueError(f"no PSD bins inside band {tuple(band)}")
    f, p = freqs[mask], psd[mask]
    return HrEstimate(float(f[np.argmax(p)] * 60.0), f, p)


@dataclass
class SnrResult:
    db: float
    clamped: bool


def snr_metric(
    x: BvpSignal,
    gt_hr: float,
    half_width_hz: float = 0.1,
    noise_band: Tuple[float, float] = (0.6, 4.0),
    n_fft: Optional[int] = None,
    ceiling_db: float = 60.0,
) -> SnrResult:
    """Power near the HR fundamental and first harmonic over the rest of the band.

    The spectrum is a plain periodogram of the mean-removed signal. Results above
    ``ceiling_db`` (including zero noise power) are clamped and flagged.
    """
    f_hr = gt_hr / 60.0
    lo, hi = noise_band
    if not lo <= f_hr <= hi:
        raise ValueError(f"HR {gt_hr} bpm lies outside the noise band {noise_band} Hz")
    data = x.samples - x.samples.mean()
    n_fft = data.size if n_fft is None else int(n_fft)
    power = np.abs(np.fft.rfft(data, n_fft)) ** 2
    freqs = np.arange(power.size) * x.fs / n_fft
    eps = 1e-9 * x.fs / n_fft
    in_band = (freqs >= lo - eps) & (freqs <= hi + eps)
    sig = in_band & (
        (np.abs(freqs - f_hr) <= half_width_hz + eps) | (np.abs(freqs - 2 * f_hr) <= half_width_hz + eps)
    )
    noise = in_band & ~sig
    p_sig, p_noise = power[sig].sum(), power[noise].sum()
    if p_noise <= 0 or (p_sig > 0 and 10 * np.log10(p_sig / p_noise) > ceiling_db):
        return SnrResult(ceiling_db, True)
    if p_sig <= 0:
        return SnrResult(-ceiling_db, True)
    return SnrResult(float(10 * np.log10(p_sig / p_noise)), False)


def hr_metrics(pred_hrs: Sequence[float], gt_hrs: Sequence[float], snrs: Optional[Sequence[float]] = None) -> HrMetrics:
    pred = np.asarray(pred_hrs, dtype=np.float64)
    gt = np.asarray(gt_hrs, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1 or pred.size < 2:
        raise ValueError("need equal-length HR lists with at least 2 entries")
    if np.any(gt == 0):
        raise ValueError("ground-truth HR of zero makes MAPE undefined")
    d = pred - gt
    mae = float(np.mean(np.abs(d)))
    rmse = float(np.sqrt(np.mean(d ** 2)))
    mape = float(np.mean(np.abs(d) / np.abs(gt)) * 100)
    pc, gc = pred - pred.mean(), gt - gt.mean()
    denom = np.sqrt((pc @ pc) * (gc @ gc))
    if denom == 0:
        warnings.warn("constant HR series; Pearson correlation undefined", MetricWarning, stacklevel=2)
        rho = float("nan")
    else:
        rho = float(np.clip((pc @ gc) / denom, -1.0, 1.0))
    snr = float(np.mean(snrs)) if snrs is not None and len(snrs) else float("nan")
    return HrMetrics(mae, rmse, mape, rho, snr)


def bland_altman(pred_hrs: Sequence[float], gt_hrs: Sequence[float]) -> np.ndarray:
    """Rows of ``(mean, difference)`` per clip, difference = pred - gt."""
    pred = np.asarray(pred_hrs, dtype=np.float64)
    gt = np.asarray(gt_hrs, dtype=np.float64)
    return np.column_stack([(pred + gt) / 2, pred - gt])


# --------------------------------------------------------------------------
# classical baselines


def roi_trace(clip: VideoClip, roi: Sequence[int]) -> np.ndarray:
    """Spatial mean RGB per frame over ``roi = (top, left, height, width)``, shape ``(T, 3)``."""
    top, left, h, w = (int(v) for v in roi)
    H, W = clip.hw
    if h <= 0 or w <= 0:
        raise ValueError("roi is empty")
    if top < 0 or left < 0 or top + h > H or left + w > W:
        raise ValueError(f"roi {tuple(roi)} falls outside the {H}x{W} frame")
    return clip.frames[:, :, top:top + h, left:left + w].mean(axis=(2, 3)).T


def pos_projection(rgb: np.ndarray, fps: float, window_s: float = 1.6) -> np.ndarray:
    """Plane-orthogonal-to-skin pulse from a ``(T, 3)`` RGB trace, overlap-added."""
    T = rgb.shape[0]
    L = int(np.ceil(window_s * fps))
    L = min(L, T)
    proj = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])
    out = np.zeros(T)
    for start in range(0, T - L + 1):
        c = rgb[start:start + L]
        mean = c.mean(axis=0)
        if np.any(mean == 0):
            continue
        s = (c / mean) @ proj.T  # (L, 2)
        s1, s2 = s[:, 0], s[:, 1]
        sd2 = s2.std()
        h = s1 + (s1.std() / sd2 if sd2 > 0 else 0.0) * s2
        out[start:start + L] += h - h.mean()
    return out


def pos_baseline(clip: VideoClip, roi: Sequence[int], spec: Optional[FilterSpec] = None) -> BvpSignal:
    raw = BvpSignal(pos_projection(roi_trace(clip, roi), clip.fps), clip.fps)
    return butterworth_bandpass(raw, spec or FilterSpec(fs=clip.fps))


def green_baseline(clip: VideoClip, roi: Sequence[int], spec: Optional[FilterSpec] = None) -> BvpSignal:
    g = roi_trace(clip, roi)[:, 1]
    detrended = sps.detrend(g, type="linear")
    return butterworth_bandpass(BvpSignal(detrended, clip.fps), spec or FilterSpec(fs=clip.fps))
