"""Command-line entry point.

Every subcommand writes its files into ``--out`` and a ``<file>.meta.json``
sidecar next to each one (config hash, seed, command, inputs). The main result
is also printed to stdout as JSON; errors go to stderr as
``{"error": {"code": ..., "message": ...}}`` with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import data as D
from . import signal as S
from .attention import attention_weights
from .losses import LossWeights, loss_gradients, overall_loss
from .model import check_input, init_model, model_forward, model_summary
from .numerics import ShapeError
from .storage import RunConfig, load_config, load_weights, save_weights

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage and exit(2)
        raise CliError("usage", message, EXIT_USAGE)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _stderr(kind: str, message: str) -> None:
    print(json.dumps({kind: message}), file=sys.stderr)


class Outputs:
    """Writes result files plus provenance sidecars into one directory."""

    def __init__(self, out: str, command: str, cfg: RunConfig, seed: Optional[int], inputs: Sequence[str]):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {
            "command": command,
            "config_hash": cfg.digest(),
            "seed": seed,
            "inputs": [str(p) for p in inputs],
        }
        self.files: List[str] = []

    def path(self, name: str) -> Path:
        return self.dir / name

    def sidecar(self, name: str) -> None:
        meta = dict(self.meta, file=name)
        (self.dir / f"{name}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        self.files.append(name)

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        self.sidecar(name)

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.sidecar(name)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _model_params(cfg: RunConfig, args):
    if getattr(args, "weights", None):
        return load_weights(cfg.model, args.weights), None
    seed = cfg.seed if args.seed is None else args.seed
    return init_model(cfg.model, seed), seed


def _model_input(clip: D.VideoClip, resize: Optional[Sequence[int]]) -> D.VideoClip:
    H, W = clip.hw
    if resize:
        oh, ow = resize
    elif H % 16 or W % 16:
        oh, ow = H // 16 * 16, W // 16 * 16
        if oh == 0 or ow == 0:
            raise ShapeError(f"frames of {H}x{W} are too small for the model")
        _stderr("warning", f"resizing {H}x{W} frames to {oh}x{ow} (model needs multiples of 16)")
    else:
        return clip
    return D.crop_window(clip, (0, 0, H, W), (oh, ow))


def _bvp_rows(bvp: D.BvpSignal):
    return zip(bvp.times, bvp.samples)


def _default_roi(clip: D.VideoClip) -> tuple:
    H, W = clip.hw
    return (H // 4, W // 4, H // 2, W // 2)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> dict:
    cfg = load_config(args.config)
    hr = args.hr if args.hr_end is None else np.linspace(args.hr, args.hr_end, args.frames)
    spec = D.SyntheticSceneSpec(
        T=args.frames, H=args.height, W=args.width, fps=args.fps, hr_bpm=hr,
        pulse_amplitude=args.amplitude, noise_sigma=args.noise, motion_amplitude_px=args.motion, seed=args.seed,
    )
    clip, bvp = D.generate_synthetic_clip(spec)
    out = Outputs(args.out, "synth", cfg, args.seed, [])
    D.save_clip(clip, out.path("clip"))
    out.sidecar("clip.json")
    out.sidecar("clip.bin")
    out.csv("bvp.csv", ["time_s", "value"], _bvp_rows(bvp))
    hr_est = S.estimate_hr(bvp, cfg.hr_band).bpm
    result = {"clip": str(out.path("clip.json")), "bvp": str(out.path("bvp.csv")), "frames": args.frames, "fps": args.fps,
              "hr_bpm": float(np.mean(hr)), "estimated_hr_bpm": hr_est}
    out.json("synth.json", result)
    return result


def cmd_forward(args) -> dict:
    cfg = load_config(args.config)
    clip = _model_input(D.load_clip(args.clip), args.resize)
    params, seed = _model_params(cfg, args)
    bvp = model_forward(clip, cfg.model, params)
    out = Outputs(args.out, "forward", cfg, seed, [args.clip] + ([args.weights] if args.weights else []))
    out.csv("bvp_pred.csv", ["time_s", "value"], _bvp_rows(bvp))
    if args.save_weights:
        save_weights(params, out.path("weights"))
        out.sidecar("weights.json")
        out.sidecar("weights.bin")
    result = {"bvp": str(out.path("bvp_pred.csv")), "samples": len(bvp), "fps": bvp.fs,
              "input_shape": list(clip.frames.shape)}
    return result


def cmd_loss(args) -> dict:
    cfg = load_config(args.config)
    pred, gt = D.load_bvp(args.pred), D.load_bvp(args.gt)
    w = LossWeights(
        cfg.loss_weights.alpha if args.alpha is None else args.alpha,
        cfg.loss_weights.beta if args.beta is None else args.beta,
        cfg.loss_weights.gamma if args.gamma is None else args.gamma,
    )
    sigma = cfg.sigma if args.sigma is None else args.sigma
    res = overall_loss(pred, gt, w, sigma, n_fft=args.n_fft)
    result = res.as_dict()
    result["sigma"] = sigma
    out = Outputs(args.out, "loss", cfg, None, [args.pred, args.gt])
    out.json("loss.json", result)
    if args.grad:
        g = loss_gradients(pred, gt, w, n_fft=args.n_fft)
        out.csv("grad.csv", ["index", "grad"], enumerate(g))
    return result


def cmd_hr(args) -> dict:
    cfg = load_config(args.config)
    bvp = D.load_bvp(args.bvp)
    if not args.no_filter:
        bvp = S.butterworth_bandpass(bvp, S.FilterSpec(tuple(args.filter_band or cfg.filter_band), bvp.fs))
    band = tuple(args.band or cfg.hr_band)
    est = S.estimate_hr(bvp, band)
    result = {"hr_bpm": est.bpm, "band_hz": list(band), "filtered": not args.no_filter}
    if args.gt_hr is not None:
        snr = S.snr_metric(bvp, args.gt_hr)
        result.update(snr_db=snr.db, snr_clamped=snr.clamped)
    out = Outputs(args.out, "hr", cfg, None, [args.bvp])
    out.json("hr.json", result)
    out.csv("psd.csv", ["freq_hz", "power"], zip(est.freqs, est.psd))
    return result


def _clip_bvp(method: str, clip: D.VideoClip, cfg: RunConfig, params, roi) -> D.BvpSignal:
    if method == "pos":
        return S.pos_baseline(clip, roi or _default_roi(clip), S.FilterSpec(cfg.filter_band, clip.fps))
    if method == "green":
        return S.green_baseline(clip, roi or _default_roi(clip), S.FilterSpec(cfg.filter_band, clip.fps))
    return model_forward(clip, cfg.model, params)


def _eval_one(job):
    clip_dir, method, cfg, params, roi, resize = job
    clip = D.load_clip(Path(clip_dir) / "clip.json")
    gt = D.load_bvp(Path(clip_dir) / "bvp.csv")
    if method == "model":
        clip = _model_input(clip, resize)
    pred = _clip_bvp(method, clip, cfg, params, roi)
    spec = S.FilterSpec(cfg.filter_band, pred.fs)
    if method == "model":
        pred = S.butterworth_bandpass(pred, spec)
    pred_hr = S.estimate_hr(pred, cfg.hr_band).bpm
    gt_hr = S.estimate_hr(gt, cfg.hr_band).bpm
    snr = S.snr_metric(pred, gt_hr)
    return str(clip_dir), pred_hr, gt_hr, snr.db


def cmd_eval(args) -> dict:
    cfg = load_config(args.config)
    params, seed = (None, None)
    if args.method == "model":
        params, seed = _model_params(cfg, args)
    jobs = [(c, args.method, cfg, params, args.roi, args.resize) for c in args.clips]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_eval_one, jobs))
    else:
        rows = [_eval_one(j) for j in jobs]
    pred = [r[1] for r in rows]
    gt = [r[2] for r in rows]
    out = Outputs(args.out, "eval", cfg, seed, list(args.clips))
    out.csv("per_clip.csv", ["clip", "pred_hr_bpm", "gt_hr_bpm", "snr_db"], rows)
    if len(rows) >= 2:
        metrics = S.hr_metrics(pred, gt, [r[3] for r in rows]).as_dict()
    else:
        metrics = {"mae": abs(pred[0] - gt[0]), "note": "single clip: only MAE is defined"}
    out.csv("bland_altman.csv", ["mean_bpm", "diff_bpm"], S.bland_altman(pred, gt))
    result = {"method": args.method, "clips": len(rows), "metrics": metrics}
    out.json("metrics.json", result)
    return result


def cmd_baseline(args) -> dict:
    cfg = load_config(args.config)
    clip = D.load_clip(args.clip)
    roi = tuple(args.roi) if args.roi else _default_roi(clip)
    bvp = _clip_bvp(args.method, clip, cfg, None, roi)
    out = Outputs(args.out, "baseline", cfg, None, [args.clip])
    out.csv(f"bvp_{args.method}.csv", ["time_s", "value"], _bvp_rows(bvp))
    result = {"method": args.method, "roi": list(roi), "hr_bpm": S.estimate_hr(bvp, cfg.hr_band).bpm}
    out.json(f"baseline_{args.method}.json", result)
    return result


def cmd_attn_dump(args) -> dict:
    cfg = load_config(args.config)
    clip = _model_input(D.load_clip(args.clip), args.resize)
    params, seed = _model_params(cfg, args)
    n_stages = len(cfg.model.schedule)
    if not 0 <= args.stage < n_stages:
        raise CliError("bad_stage", f"stage must be in [0, {n_stages}), got {args.stage}")
    traces: list = []
    model_forward(clip, cfg.model, params, traces=traces)
    tr = traces[args.stage]
    grid = tr["grid"]
    if not 0 <= args.query < grid.token_count:
        raise CliError("bad_query", f"query token must be in [0, {grid.token_count}), got {args.query}")
    weights = attention_weights(tr["q"], tr["k"], tr["routes"], grid, cfg.model.heads, args.query)
    out = Outputs(args.out, "attn-dump", cfg, seed, [args.clip] + ([args.weights] if args.weights else []))
    scores = tr["scores"]
    out.csv("pre_attention_scores.csv", ["query_region"] + [f"key_{j}" for j in range(scores.shape[1])],
            ([i] + list(row) for i, row in enumerate(scores)))
    routes = {
        "stage": args.stage,
        "n": cfg.model.schedule[args.stage],
        "token_shape": list(grid.token_shape),
        "region_window": list(grid.window),
        "region_grid": list(grid.counts),
        "topk": int(tr["routes"].shape[1]),
        "routes": tr["routes"].tolist(),
    }
    out.json("routing.json", routes)
    T, Sh, Sw = grid.token_shape
    t, rem = divmod(np.arange(grid.token_count), Sh * Sw)
    h, w = divmod(rem, Sw)
    out.csv("refined_weights.csv", ["key_token", "t", "h", "w"] + [f"head_{i}" for i in range(weights.shape[0])],
            ([k, t[k], h[k], w[k]] + list(weights[:, k]) for k in range(grid.token_count)))
    result = {"stage": args.stage, "query": args.query, "regions": grid.region_count, "topk": routes["topk"],
              "files": list(out.files)}
    return result


def cmd_summary(args) -> dict:
    cfg = load_config(args.config)
    shape = (3,) + tuple(args.input)
    check_input(shape, cfg.model)
    result = model_summary(cfg.model, shape).as_dict()
    result["config_hash"] = cfg.digest()
    if args.out:
        Outputs(args.out, "summary", cfg, cfg.seed, []).json("summary.json", result)
    return result


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="periodic-rppg", description="Periodic sparse-attention rPPG toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", default="default", help="config file or 'default'")
        sp.add_argument("--out", required=out_required, help="output directory")

    def model_args(sp):
        sp.add_argument("--weights", help="checkpoint manifest (.json); random init if omitted")
        sp.add_argument("--seed", type=int, help="init seed when no weights are given (default: config)")
        sp.add_argument("--resize", type=int, nargs=2, metavar=("H", "W"), help="resize frames before the model")

    sp = sub.add_parser("synth", help="generate a synthetic clip with known BVP")
    common(sp)
    sp.add_argument("--hr", type=float, default=72.0)
    sp.add_argument("--hr-end", type=float, help="final HR for a linear drift")
    sp.add_argument("--frames", type=int, default=160)
    sp.add_argument("--height", type=int, default=72)
    sp.add_argument("--width", type=int, default=72)
    sp.add_argument("--fps", type=float, default=30.0)
    sp.add_argument("--amplitude", type=float, default=2.0)
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--motion", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("forward", help="predict a BVP from a clip")
    common(sp)
    sp.add_argument("--clip", required=True)
    model_args(sp)
    sp.add_argument("--save-weights", action="store_true", help="also write the weights used")
    sp.set_defaults(fn=cmd_forward)

    sp = sub.add_parser("loss", help="hybrid loss between two BVP CSVs")
    common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    for name in ("alpha", "beta", "gamma", "sigma"):
        sp.add_argument(f"--{name}", type=float)
    sp.add_argument("--n-fft", type=int)
    sp.add_argument("--grad", action="store_true", help="write grad.csv")
    sp.set_defaults(fn=cmd_loss)

    sp = sub.add_parser("hr", help="heart rate of a BVP CSV")
    common(sp)
    sp.add_argument("--bvp", required=True)
    sp.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--filter-band", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--no-filter", action="store_true")
    sp.add_argument("--gt-hr", type=float, help="reference HR (bpm) for SNR")
    sp.set_defaults(fn=cmd_hr)

    sp = sub.add_parser("eval", help="HR metrics over clip directories (clip.json + bvp.csv)")
    common(sp)
    sp.add_argument("--clips", nargs="+", required=True)
    sp.add_argument("--method", choices=["model", "pos", "green"], default="model")
    sp.add_argument("--roi", type=int, nargs=4, metavar=("TOP", "LEFT", "H", "W"))
    sp.add_argument("--jobs", type=int, default=1)
    model_args(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("baseline", help="classical POS/GREEN pulse extraction")
    common(sp)
    sp.add_argument("--clip", required=True)
    sp.add_argument("--method", choices=["pos", "green"], default="pos")
    sp.add_argument("--roi", type=int, nargs=4, metavar=("TOP", "LEFT", "H", "W"))
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("attn-dump", help="export pre-attention scores, routing and refined weights")
    common(sp)
    sp.add_argument("--clip", required=True)
    sp.add_argument("--stage", type=int, default=0)
    sp.add_argument("--query", type=int, default=0, help="query token index on the stage's token grid")
    model_args(sp)
    sp.set_defaults(fn=cmd_attn_dump)

    sp = sub.add_parser("summary", help="parameter and MAC counts")
    common(sp, out_required=False)
    sp.add_argument("--input", type=int, nargs=3, default=[160, 128, 128], metavar=("T", "H", "W"))
    sp.set_defaults(fn=cmd_summary)
    return p


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = args.fn(args)
    except CliError as e:
        print(json.dumps({"error": {"code": e.code, "message": str(e)}}), file=sys.stderr)
        return e.status
    except ShapeError as e:
        print(json.dumps({"error": {"code": "shape", "message": str(e)}}), file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, OSError, IndexError) as e:
        print(json.dumps({"error": {"code": type(e).__name__, "message": str(e)}}), file=sys.stderr)
        return EXIT_RUNTIME
    _emit(result)
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
