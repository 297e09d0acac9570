"""Run configuration (INI text) and weight checkpoints (JSON manifest + blob)."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .losses import LossWeights
from .model import ModelConfig, ModelParams, init_model, named_arrays

DEFAULT_CONFIG_TEXT = """\
# Model and pipeline configuration. Keys are case-insensitive; '#' starts a comment.

[model]
channels = 64          # token width C
stem_channels = 32     # width after the first stem stage
heads = 4
topk = auto            # integer, 'auto' (a quarter of the regions) or 'all' (dense)
partition = 2          # temporal partition coefficient x
tdc_theta = 0.7
ff_ratio = 2
head_hidden = 32
schedule = 1,2,3       # sampling coefficient n of each stage, in order
alpha = 0.5            # fusion stem weights
beta = 0.5
bn_eps = 1e-5

[init]
seed = 0

[signal]
filter_low = 0.75
filter_high = 2.5
hr_low = 0.67
hr_high = 3.0

[loss]
alpha = 0.2
beta = 1.0
gamma = 1.0
sigma = 3.0
"""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    filter_band: tuple = (0.75, 2.5)
    hr_band: tuple = (0.67, 3.0)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    sigma: float = 3.0

    def as_dict(self) -> dict:
        m = self.model
        return {
            "model": {
                "channels": m.channels,
                "stem_channels": m.stem_channels,
                "heads": m.heads,
                "topk": "auto" if m.topk is None else m.topk,
                "partition": m.partition,
                "tdc_theta": m.tdc_theta,
                "ff_ratio": m.ff_ratio,
                "head_hidden": m.hidden,
                "schedule": list(m.schedule),
                "alpha": m.alpha,
                "beta": m.beta,
                "bn_eps": m.bn_eps,
            },
            "init": {"seed": self.seed},
            "signal": {"filter_band": list(self.filter_band), "hr_band": list(self.hr_band)},
            "loss": {
                "alpha": self.loss_weights.alpha,
                "beta": self.loss_weights.beta,
                "gamma": self.loss_weights.gamma,
                "sigma": self.sigma,
            },
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _topk(text: str):
    text = text.strip().lower()
    if text in ("auto", "none", ""):
        return None
    if text == "all":
        return "all"
    return int(text)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(DEFAULT_CONFIG_TEXT)
    cp.read_string(text)
    known = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    known.read_string(DEFAULT_CONFIG_TEXT)
    for section in cp.sections():
        if not known.has_section(section):
            raise ValueError(f"unknown config section [{section}]")
        for key in cp[section]:
            if not known.has_option(section, key):
                raise ValueError(f"unknown config key '{key}' in [{section}]")
    m = cp["model"]
    model = ModelConfig(
        channels=m.getint("channels"),
        stem_channels=m.getint("stem_channels"),
        heads=m.getint("heads"),
        topk=_topk(m["topk"]),
        partition=m.getint("partition"),
        tdc_theta=m.getfloat("tdc_theta"),
        ff_ratio=m.getint("ff_ratio"),
        head_hidden=m.getint("head_hidden"),
        schedule=tuple(int(v) for v in m["schedule"].split(",") if v.strip()),
        alpha=m.getfloat("alpha"),
        beta=m.getfloat("beta"),
        bn_eps=m.getfloat("bn_eps"),
    )
    s, lo = cp["signal"], cp["loss"]
    return RunConfig(
        model=model,
        seed=cp["init"].getint("seed"),
        filter_band=(s.getfloat("filter_low"), s.getfloat("filter_high")),
        hr_band=(s.getfloat("hr_low"), s.getfloat("hr_high")),
        loss_weights=LossWeights(lo.getfloat("alpha"), lo.getfloat("beta"), lo.getfloat("gamma")),
        sigma=lo.getfloat("sigma"),
    )


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Read a config file; ``None`` or ``"default"`` gives the built-in defaults."""
    if path is None or str(path) == "default":
        return parse_config("")
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# checkpoints


def save_weights(params: ModelParams, path: Union[str, Path]) -> Path:
    """Write ``<path>.bin`` (little-endian float64) and ``<path>.json`` (manifest)."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    layers = {}
    offset = 0
    with blob_path.open("wb") as fh:
        for name, owner, attr in named_arrays(params):
            arr = np.ascontiguousarray(getattr(owner, attr), dtype="<f8")
            fh.write(arr.tobytes())
            layers[name] = {"offset": offset, "shape": list(arr.shape), "dtype": "float64"}
            offset += arr.nbytes
    manifest = {"format": "periodic-rppg-weights/1", "data": blob_path.name, "byte_order": "little", "layers": layers}
    man_path = path.with_suffix(".json")
    man_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return man_path


def load_weights(cfg: ModelConfig, path: Union[str, Path]) -> ModelParams:
    """Fill a freshly built model for ``cfg`` with the arrays of a checkpoint."""
    man_path = Path(path)
    if man_path.suffix != ".json":
        man_path = man_path.with_suffix(".json")
    manifest = json.loads(man_path.read_text())
    raw = (man_path.parent / manifest["data"]).read_bytes()
    layers = manifest["layers"]
    params = init_model(cfg, seed=0)
    expected = set()
    for name, owner, attr in named_arrays(params):
        expected.add(name)
        if name not in layers:
            raise ValueError(f"checkpoint lacks layer '{name}'")
        entry = layers[name]
        shape = tuple(entry["shape"])
        current = getattr(owner, attr)
        if shape != current.shape:
            raise ValueError(f"layer '{name}' has shape {shape} in checkpoint, config expects {current.shape}")
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=int(entry["offset"]))
        setattr(owner, attr, arr.reshape(shape).astype(np.float64))
    extra = set(layers) - expected
    if extra:
        raise ValueError(f"checkpoint has layers the config does not: {sorted(extra)[:5]}")
    return params
