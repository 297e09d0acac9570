"""End-to-end smoke run through the command line: synth, forward, hr, eval.

    python scripts/smoke.py --work /tmp/smoke
"""

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path


def run(*args):
    res = subprocess.run([sys.executable, "-m", "periodic_rppg.cli", *map(str, args)], capture_output=True, text=True)
    if res.returncode:
        sys.exit(f"failed: {' '.join(map(str, args))}\n{res.stderr}")
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="results/smoke")
    ap.add_argument("--size", type=int, default=72)
    ap.add_argument("--frames", type=int, default=160)
    ap.add_argument("--hrs", type=float, nargs="+", default=[68.0, 84.0, 110.0])
    args = ap.parse_args()

    work = Path(args.work)
    start = time.perf_counter()
    clips = []
    for i, hr in enumerate(args.hrs):
        d = work / f"clip{i}"
        run("synth", "--hr", hr, "--frames", args.frames, "--height", args.size, "--width", args.size,
            "--seed", i, "--out", d)
        run("forward", "--clip", d / "clip.json", "--out", work / f"pred{i}")
        est = run("hr", "--bvp", work / f"pred{i}" / "bvp_pred.csv", "--gt-hr", hr, "--out", work / f"hr{i}")
        print(f"clip {i}: true {hr:.1f} bpm, untrained model {est['hr_bpm']:.1f} bpm, SNR {est['snr_db']:.1f} dB")
        clips.append(d)
    for method in ("model", "pos", "green"):
        m = run("eval", "--clips", *clips, "--method", method, "--out", work / f"eval_{method}")["metrics"]
        print(f"eval {method:5s}: MAE {m['mae']:.2f}  RMSE {m['rmse']:.2f}  rho {m['pearson_rho']:.3f}")
    files = [p for p in work.rglob("*") if p.is_file()]
    missing = [p for p in files if not p.name.endswith(".meta.json") and not p.with_name(p.name + ".meta.json").exists()]
    print(f"{len(files)} files, {len(missing)} without a sidecar, {time.perf_counter() - start:.1f} s")


if __name__ == "__main__":
    main()
