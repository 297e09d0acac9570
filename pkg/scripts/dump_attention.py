"""Pre-attention scores, routing and one refined-attention row for every stage.

Runs the model on a synthetic clip and writes, per stage, the region score
matrix (.npy), the routing table (.json) and the query token's weights over
the token grid (.npy, shape heads x T x H x W), which is what an attention-map
figure is drawn from.

    python scripts/dump_attention.py --out results/attention --query-frame 10
"""

import argparse
import json
from pathlib import Path

import numpy as np

from periodic_rppg.attention import attention_weights
from periodic_rppg.data import SyntheticSceneSpec, generate_synthetic_clip
from periodic_rppg.model import init_model, model_forward
from periodic_rppg.storage import load_config, load_weights


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/attention")
    ap.add_argument("--config", default="default")
    ap.add_argument("--weights")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=128, help="frame height and width")
    ap.add_argument("--frames", type=int, default=160)
    ap.add_argument("--hr", type=float, default=80.0)
    ap.add_argument("--query-frame", type=int, default=0, help="temporal index of the query, at stage resolution")
    args = ap.parse_args()

    cfg = load_config(args.config)
    params = load_weights(cfg.model, args.weights) if args.weights else init_model(cfg.model, args.seed)
    clip, _ = generate_synthetic_clip(SyntheticSceneSpec(T=args.frames, H=args.size, W=args.size, hr_bpm=args.hr))
    traces = []
    model_forward(clip, cfg.model, params, traces=traces)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, tr in enumerate(traces):
        grid = tr["grid"]
        T, H, W = grid.token_shape
        t = min(args.query_frame, T - 1)
        query = (t * H + H // 2) * W + W // 2  # centre token of the chosen frame
        rows = attention_weights(tr["q"], tr["k"], tr["routes"], grid, cfg.model.heads, query)
        np.save(out / f"stage{s}_scores.npy", tr["scores"])
        np.save(out / f"stage{s}_query{query}_weights.npy", rows.reshape(-1, T, H, W))
        (out / f"stage{s}_routing.json").write_text(json.dumps({
            "n": cfg.model.schedule[s],
            "token_shape": [T, H, W],
            "region_window": list(grid.window),
            "region_grid": list(grid.counts),
            "routes": tr["routes"].tolist(),
        }, indent=1))
        attended = int((rows[0] > 0).sum())
        print(f"stage {s}: n={cfg.model.schedule[s]} tokens {T}x{H}x{W}, regions {grid.counts}, "
              f"k={tr['routes'].shape[1]}, query {query} attends {attended}/{grid.token_count} tokens")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
