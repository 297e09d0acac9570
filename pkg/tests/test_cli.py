import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from oracles import masked_dense_attention
from periodic_rppg.cli import dispatch
from periodic_rppg.data import load_bvp, load_clip
from periodic_rppg.model import init_model, model_forward
from periodic_rppg.signal import MetricWarning, estimate_hr
from periodic_rppg.storage import load_config

SMALL_INI = """
[model]
channels = 8
stem_channels = 4
heads = 2
topk = {topk}
"""


def run(argv, capsys):
    code = dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def small_config(tmp_path, topk="auto"):
    p = tmp_path / f"small_{topk}.ini"
    p.write_text(SMALL_INI.format(topk=topk))
    return p


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert dispatch(["synth", "--hr", "90", "--frames", "160", "--height", "64", "--width", "64",
                     "--noise", "0", "--out", str(d)]) == 0
    return d


def test_synth_outputs(synth_dir):
    for name in ("clip.json", "clip.bin", "bvp.csv", "synth.json"):
        assert (synth_dir / name).exists() and (synth_dir / f"{name}.meta.json").exists()
    bvp = load_bvp(synth_dir / "bvp.csv")
    assert len(bvp) == 160
    assert abs(estimate_hr(bvp).bpm - 90) <= 60 * 30 / 2048
    assert load_clip(synth_dir / "clip.json").frames.shape == (3, 160, 64, 64)


def test_sidecar_contents(synth_dir):
    meta = json.loads((synth_dir / "bvp.csv.meta.json").read_text())
    assert meta["command"] == "synth" and meta["file"] == "bvp.csv" and meta["seed"] == 0
    assert meta["config_hash"] == load_config("default").digest()


def test_summary(capsys):
    code, out, _ = run(["summary", "--config", "default"], capsys)
    res = json.loads(out)
    assert code == 0 and res["params"] > 0 and res["macs"] > 0


def test_forward_default_128(tmp_path, capsys):
    code, _, _ = run(["synth", "--frames", "160", "--height", "128", "--width", "128", "--out", tmp_path / "c"], capsys)
    assert code == 0
    code, out, err = run(["forward", "--clip", tmp_path / "c" / "clip.json", "--out", tmp_path / "f"], capsys)
    assert code == 0 and err == ""
    header, rows = read_csv(tmp_path / "f" / "bvp_pred.csv")
    assert header == ["time_s", "value"] and len(rows) == 160
    assert (tmp_path / "f" / "bvp_pred.csv.meta.json").exists()


def test_forward_idempotent_and_weights(synth_dir, tmp_path, capsys):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        code, _, _ = run(["forward", "--config", cfg, "--clip", synth_dir / "clip.json", "--seed", 3,
                          "--save-weights", "--out", tmp_path / name], capsys)
        assert code == 0
    for f in ("bvp_pred.csv", "bvp_pred.csv.meta.json", "weights.bin", "weights.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    # reloading the saved weights reproduces the prediction
    code, _, _ = run(["forward", "--config", cfg, "--clip", synth_dir / "clip.json",
                      "--weights", tmp_path / "a" / "weights.json", "--out", tmp_path / "c"], capsys)
    assert code == 0
    assert read_csv(tmp_path / "a" / "bvp_pred.csv") == read_csv(tmp_path / "c" / "bvp_pred.csv")


def test_forward_resizes_with_warning(tmp_path, capsys):
    assert dispatch(["synth", "--frames", "64", "--out", str(tmp_path / "c")]) == 0  # 72x72 frames
    capsys.readouterr()
    code, out, err = run(["forward", "--config", small_config(tmp_path), "--clip", tmp_path / "c" / "clip.json",
                          "--out", tmp_path / "f"], capsys)
    assert code == 0 and "warning" in json.loads(err.splitlines()[0])
    assert json.loads(out)["input_shape"] == [3, 64, 64, 64]


def attn_dump(synth_dir, tmp_path, capsys, topk, stage=0, query=5):
    out = tmp_path / f"attn_{topk}_{stage}"
    code, res, _ = run(["attn-dump", "--config", small_config(tmp_path, topk), "--clip", synth_dir / "clip.json",
                        "--stage", stage, "--query", query, "--out", out], capsys)
    assert code == 0
    return out, json.loads(res)


@pytest.mark.parametrize("stage", [0, 2])
def test_attn_dump_contract(synth_dir, tmp_path, capsys, stage):
    out, res = attn_dump(synth_dir, tmp_path, capsys, "auto", stage)
    routing = json.loads((out / "routing.json").read_text())
    k = routing["topk"]
    R = int(np.prod(routing["region_grid"]))
    assert k == -(-R // 4)
    for row in routing["routes"]:
        assert len(row) == k and len(set(row)) == k
    header, rows = read_csv(out / "refined_weights.csv")
    w = np.array([[float(v) for v in r[4:]] for r in rows])
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-9)
    _, scores = read_csv(out / "pre_attention_scores.csv")
    assert len(scores) == R and len(scores[0]) == R + 1
    for f in ("routing.json", "refined_weights.csv", "pre_attention_scores.csv"):
        assert (out / f"{f}.meta.json").exists()


def test_attn_dump_all_regions_is_dense(synth_dir, tmp_path, capsys):
    query = 37
    out, _ = attn_dump(synth_dir, tmp_path, capsys, "all", 0, query)
    _, rows = read_csv(out / "refined_weights.csv")
    dumped = np.array([[float(v) for v in r[4:]] for r in rows]).T  # (heads, N)

    cfg = load_config(small_config(tmp_path, "all")).model
    traces = []
    model_forward(load_clip(synth_dir / "clip.json"), cfg, init_model(cfg, 0), traces=traces)
    tr = traces[0]
    # every token in one region that routes to itself: the mask allows everything
    N = tr["grid"].token_count
    _, dense = masked_dense_attention(tr["q"], tr["k"], tr["k"], np.zeros(N, int), [[0]], cfg.heads)
    np.testing.assert_allclose(dumped, dense[:, query], rtol=1e-12, atol=1e-15)


def test_attn_dump_errors(synth_dir, tmp_path, capsys):
    base = ["attn-dump", "--config", small_config(tmp_path), "--clip", synth_dir / "clip.json", "--out", tmp_path / "x"]
    code, _, err = run(base + ["--query", 10 ** 6], capsys)
    assert code == 1 and json.loads(err)["error"]["code"] == "bad_query"
    code, _, err = run(base + ["--stage", 7], capsys)
    assert code == 1 and json.loads(err)["error"]["code"] == "bad_stage"


def test_hr_and_loss(synth_dir, tmp_path, capsys):
    bvp = synth_dir / "bvp.csv"
    code, out, _ = run(["hr", "--bvp", bvp, "--gt-hr", 90, "--out", tmp_path / "h"], capsys)
    res = json.loads(out)
    assert code == 0 and abs(res["hr_bpm"] - 90) <= 1 and res["snr_db"] > 0
    assert read_csv(tmp_path / "h" / "psd.csv")[0] == ["freq_hz", "power"]
    code, out, _ = run(["loss", "--pred", bvp, "--gt", bvp, "--grad", "--out", tmp_path / "l"], capsys)
    res = json.loads(out)
    assert code == 0 and res["components"]["time"] == pytest.approx(0, abs=1e-12)
    assert res["components"]["hr"] == 0
    _, rows = read_csv(tmp_path / "l" / "grad.csv")
    assert len(rows) == 160


def test_baseline_and_eval(synth_dir, tmp_path, capsys):
    code, out, _ = run(["baseline", "--clip", synth_dir / "clip.json", "--method", "green", "--out", tmp_path / "b"], capsys)
    assert code == 0 and abs(json.loads(out)["hr_bpm"] - 90) <= 2
    assert (tmp_path / "b" / "bvp_green.csv.meta.json").exists()
    # the same clip twice gives a constant HR series, so rho is flagged undefined
    with pytest.warns(MetricWarning):
        code, out, _ = run(["eval", "--clips", synth_dir, synth_dir, "--method", "pos", "--jobs", 2,
                            "--out", tmp_path / "e"], capsys)
    res = json.loads(out)
    assert code == 0 and res["clips"] == 2 and res["metrics"]["mae"] <= 2
    header, rows = read_csv(tmp_path / "e" / "bland_altman.csv")
    assert header == ["mean_bpm", "diff_bpm"] and len(rows) == 2


@pytest.mark.parametrize(
    "argv,status,code",
    [
        (["frobnicate"], 2, "usage"),
        (["summary", "--bogus"], 2, "usage"),
        (["forward", "--clip", "/nonexistent/clip.json", "--out", "OUT"], 1, "FileNotFoundError"),
        (["summary", "--input", "160", "100", "100"], 1, "shape"),
    ],
)
def test_error_json(argv, status, code, tmp_path, capsys):
    argv = [str(tmp_path / "o") if a == "OUT" else a for a in argv]
    c, out, err = run(argv, capsys)
    assert c == status and out == ""
    assert json.loads(err)["error"]["code"] == code


def test_malformed_config_exit(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nwidth = 3\n")
    c, _, err = run(["summary", "--config", bad], capsys)
    assert c == 1 and "width" in json.loads(err)["error"]["message"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "periodic_rppg.cli", "summary", "--input", "64", "64", "64"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["params"] > 0
