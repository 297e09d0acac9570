"""NumPy implementation of a periodic sparse-attention rPPG model and its signal chain."""

from .data import BvpSignal, SyntheticSceneSpec, VideoClip, generate_synthetic_clip
from .model import ModelConfig, init_model, model_forward, model_summary
from .losses import LossWeights, overall_loss
from .signal import butterworth_bandpass, estimate_hr, hr_metrics

__all__ = [
    "BvpSignal",
    "SyntheticSceneSpec",
    "VideoClip",
    "generate_synthetic_clip",
    "ModelConfig",
    "init_model",
    "model_forward",
    "model_summary",
    "LossWeights",
    "overall_loss",
    "butterworth_bandpass",
    "estimate_hr",
    "hr_metrics",
]

__version__ = "0.1.0"
