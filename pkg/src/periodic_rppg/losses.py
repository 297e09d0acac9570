"""Hybrid BVP loss: negative Pearson, spectral cross-entropy and an HR distance.

The HR term compares Gaussian HR distributions centred on each signal's
spectral peak. Its argmax makes it piecewise constant, so it is reported but
contributes nothing to :func:`loss_gradients`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .data import BvpSignal

DEFAULT_BAND = (0.67, 3.0)


class DegenerateSignalWarning(UserWarning):
    """A loss input was constant and a conventional value was substituted."""


@dataclass
class LossWeights:
    alpha: float = 0.2
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class HrDistribution:
    mu: float  # bpm
    sigma: float = 3.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class LossBreakdown:
    total: float
    time: float
    freq: float
    hr: float
    weights: LossWeights
    hr_differentiable: bool = False

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "components": {"time": self.time, "freq": self.freq, "hr": self.hr},
            "weights": {"alpha": self.weights.alpha, "beta": self.weights.beta, "gamma": self.weights.gamma},
            "hr_differentiable": self.hr_differentiable,
        }


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, BvpSignal) else np.asarray(x, dtype=np.float64)


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p, g = _samples(pred), _samples(gt)
    if p.shape != g.shape or p.ndim != 1 or p.size < 2:
        raise ValueError(f"pred and gt must be equal-length 1-D signals, got {p.shape} and {g.shape}")
    if isinstance(pred, BvpSignal) and isinstance(gt, BvpSignal) and pred.fs != gt.fs:
        raise ValueError("pred and gt have different sampling rates")
    return p, g


def _fs(pred, gt) -> float:
    for s in (gt, pred):
        if isinstance(s, BvpSignal):
            return s.fs
    raise ValueError("spectral losses need BvpSignal inputs carrying a sampling rate")


def pearson_loss(pred, gt) -> float:
    """``1 - r``; a constant prediction scores 1 with a warning."""
    p, g = _pair(pred, gt)
    gc = g - g.mean()
    if not np.any(gc):
        raise ValueError("ground-truth BVP is constant; correlation undefined")
    pc = p - p.mean()
    pn = np.sqrt(pc @ pc)
    if pn == 0:
        warnings.warn("constant prediction; correlation taken as 0", DegenerateSignalWarning, stacklevel=2)
        return 1.0
    r = (pc @ gc) / (pn * np.sqrt(gc @ gc))
    return float(1.0 - r)


def _band_bins(n_fft: int, fs: float, band) -> np.ndarray:
    lo, hi = band
    if not 0 <= lo < hi or hi > fs / 2:
        raise ValueError(f"band {band} Hz must lie within [0, {fs / 2}] (Nyquist)")
    freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    idx = np.nonzero((freqs >= lo) & (freqs <= hi))[0]
    if idx.size == 0:
        raise ValueError(f"no frequency bins inside band {band} at resolution {fs / n_fft:.4f} Hz")
    return idx


def band_psd(bvp, band=DEFAULT_BAND, n_fft: Optional[int] = None, fs: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Periodogram ``|DFT(x - mean)|^2 / N`` restricted to ``band`` (Hz).

    ``n_fft`` zero-pads the transform (default: no padding).
    """
    x = _samples(bvp)
    fs = bvp.fs if isinstance(bvp, BvpSignal) else fs
    if fs is None:
        raise ValueError("sampling rate required")
    N = x.size
    if N < 32:
        raise ValueError(f"band PSD needs at least 32 samples, got {N}")
    n_fft = N if n_fft is None else int(n_fft)
    if n_fft < N:
        raise ValueError("n_fft must not be shorter than the signal")
    idx = _band_bins(n_fft, fs, band)
    spec = np.fft.rfft(x - x.mean(), n_fft)
    power = (spec.real ** 2 + spec.imag ** 2) / N
    return idx * fs / n_fft, power[idx]


def _argmax_bin(power: np.ndarray) -> int:
    if not np.any(power > 0):
        raise ValueError("degenerate spectrum: no power inside the band")
    return int(np.argmax(power))


def freq_ce_loss(pred, gt, band=DEFAULT_BAND, n_fft: Optional[int] = None) -> float:
    """Cross-entropy of the prediction's band PSD (as logits) against the gt peak bin."""
    p, g = _pair(pred, gt)
    fs = _fs(pred, gt)
    _, pg = band_psd(g, band, n_fft, fs)
    _, pp = band_psd(p, band, n_fft, fs)
    target = _argmax_bin(pg)
    if not np.any(pp > 0):
        raise ValueError("degenerate prediction spectrum: no power inside the band")
    return float(logsumexp(pp) - pp[target])


def peak_hr(bvp: BvpSignal, band=DEFAULT_BAND, n_fft: Optional[int] = None) -> float:
    freqs, power = band_psd(bvp, band, n_fft)
    return float(freqs[_argmax_bin(power)] * 60.0)


def gaussian_kl(mu_p: float, mu_q: float, sigma_p: float, sigma_q: Optional[float] = None) -> float:
    """KL(N(mu_p, sigma_p^2) || N(mu_q, sigma_q^2))."""
    sigma_q = sigma_p if sigma_q is None else sigma_q
    return float(
        np.log(sigma_q / sigma_p) + (sigma_p ** 2 + (mu_p - mu_q) ** 2) / (2 * sigma_q ** 2) - 0.5
    )


def hr_kl_loss(pred, gt, sigma: float = 3.0, band=DEFAULT_BAND, n_fft: Optional[int] = None) -> float:
    """KL between HR distributions centred on the gt and predicted spectral peaks."""
    _pair(pred, gt)
    gt_hr = HrDistribution(peak_hr(gt, band, n_fft), sigma)
    pred_hr = HrDistribution(peak_hr(pred, band, n_fft), sigma)
    return gaussian_kl(gt_hr.mu, pred_hr.mu, gt_hr.sigma, pred_hr.sigma)


def overall_loss(pred, gt, w: Optional[LossWeights] = None, sigma: float = 3.0, band=DEFAULT_BAND, n_fft: Optional[int] = None) -> LossBreakdown:
    w = w or LossWeights()
    lt = pearson_loss(pred, gt)
    lf = freq_ce_loss(pred, gt, band, n_fft)
    lh = hr_kl_loss(pred, gt, sigma, band, n_fft)
    total = w.alpha * lt + w.beta * lf + w.gamma * lh
    return LossBreakdown(total, lt, lf, lh, w)


def pearson_grad(pred, gt) -> np.ndarray:
    """Gradient of ``1 - r`` with respect to the prediction samples."""
    p, g = _pair(pred, gt)
    pc, gc = p - p.mean(), g - g.mean()
    pn, gn = np.sqrt(pc @ pc), np.sqrt(gc @ gc)
    if gn == 0:
        raise ValueError("ground-truth BVP is constant; correlation undefined")
    if pn == 0:
        return np.zeros_like(p)
    r = (pc @ gc) / (pn * gn)
    # both terms are already mean-free, so centering adds no correction
    return -(gc / (pn * gn) - r * pc / pn ** 2)


def freq_ce_grad(pred, gt, band=DEFAULT_BAND, n_fft: Optional[int] = None) -> np.ndarray:
    """Gradient of :func:`freq_ce_loss` with respect to the prediction samples."""
    p, g = _pair(pred, gt)
    fs = _fs(pred, gt)
    N = p.size
    n_fft = N if n_fft is None else int(n_fft)
    idx = _band_bins(n_fft, fs, band)
    _, pg = band_psd(g, band, n_fft, fs)
    target = _argmax_bin(pg)
    spec = np.fft.rfft(p - p.mean(), n_fft)[idx]
    power = (spec.real ** 2 + spec.imag ** 2) / N
    dl_dpower = np.exp(power - logsumexp(power))
    dl_dpower[target] -= 1.0
    # power_k = |sum_n xc_n e^{-i w_k n}|^2 / N  =>  d power_k / d xc_n = 2 Re(conj(X_k) e^{-i w_k n}) / N
    n = np.arange(N)
    phase = np.exp(-2j * np.pi * np.outer(idx, n) / n_fft)
    grad_c = 2.0 / N * ((dl_dpower * np.conj(spec)) @ phase).real
    return grad_c - grad_c.mean()


def loss_gradients(pred, gt, w: Optional[LossWeights] = None, band=DEFAULT_BAND, n_fft: Optional[int] = None) -> np.ndarray:
    """Gradient of ``alpha * L_time + beta * L_freq``; the HR term carries none."""
    w = w or LossWeights()
    p, _ = _pair(pred, gt)
    grad = np.zeros_like(p)
    if w.alpha:
        grad = grad + w.alpha * pearson_grad(pred, gt)
    if w.beta:
        grad = grad + w.beta * freq_ce_grad(pred, gt, band, n_fft)
    return grad
