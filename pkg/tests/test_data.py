import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import bilinear_sample, naive_dft, pearson_r
from periodic_rppg.data import (
    BvpSignal,
    SyntheticSceneSpec,
    VideoClip,
    augment_hflip,
    augment_temporal_resample,
    crop_window,
    generate_synthetic_clip,
    load_bvp,
    load_clip,
    save_bvp,
    save_clip,
    skin_mask,
)
from periodic_rppg.signal import estimate_hr


def small_spec(**kw):
    base = dict(T=64, H=24, W=24, noise_sigma=0.0)
    base.update(kw)
    return SyntheticSceneSpec(**base)


def test_static_scene_frames_identical():
    clip, _ = generate_synthetic_clip(small_spec(pulse_amplitude=0.0))
    assert np.all(clip.frames == clip.frames[:, :1])


def test_bvp_dominant_frequency():
    _, bvp = generate_synthetic_clip(SyntheticSceneSpec(hr_bpm=90, T=160, H=16, W=16))
    spec = np.abs(naive_dft(bvp.samples - bvp.samples.mean()))
    freqs = np.arange(spec.size) * 30 / 160
    assert freqs[np.argmax(spec)] == pytest.approx(1.5)


def test_green_trace_tracks_bvp():
    spec = SyntheticSceneSpec()
    clip, bvp = generate_synthetic_clip(spec)
    mask = skin_mask(spec)
    green = clip.frames[1][:, mask].mean(axis=1)
    assert abs(pearson_r(green, bvp.samples)) > 0.9


def test_deterministic_given_seed():
    a, _ = generate_synthetic_clip(small_spec(noise_sigma=2.0, seed=5))
    b, _ = generate_synthetic_clip(small_spec(noise_sigma=2.0, seed=5))
    c, _ = generate_synthetic_clip(small_spec(noise_sigma=2.0, seed=6))
    np.testing.assert_array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)


def test_values_clamped():
    clip, _ = generate_synthetic_clip(small_spec(noise_sigma=200.0))
    assert clip.frames.min() >= 0 and clip.frames.max() <= 255


def test_motion_moves_mask():
    spec = small_spec(motion_amplitude_px=3.0, pulse_amplitude=0.0)
    clip, _ = generate_synthetic_clip(spec)
    assert not np.array_equal(clip.frames[:, 0], clip.frames[:, 12])


def test_hr_drift_trajectory():
    hr = np.linspace(60, 120, 64)
    _, bvp = generate_synthetic_clip(small_spec(hr_bpm=hr))
    assert len(bvp) == 64


@pytest.mark.parametrize("bad", [dict(hr_bpm=30), dict(hr_bpm=200), dict(noise_sigma=-1), dict(T=4)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        small_spec(**bad)


def test_types_validate():
    with pytest.raises(ValueError):
        VideoClip(np.zeros((3, 4, 2, 2)), 30.0)
    with pytest.raises(ValueError):
        BvpSignal(np.zeros(1), 30.0)
    with pytest.raises(ValueError):
        BvpSignal(np.zeros(4), 0.0)


# cropping


def test_crop_full_frame_identity(rng):
    clip = VideoClip(rng.uniform(0, 255, size=(3, 5, 8, 10)), 30.0)
    out = crop_window(clip, (0, 0, 8, 10), (8, 10))
    np.testing.assert_allclose(out.frames, clip.frames, atol=1e-12)


def test_crop_downscale_constant():
    clip = VideoClip(np.full((3, 5, 8, 8), 42.0), 30.0)
    out = crop_window(clip, (0, 0, 8, 8), (4, 4))
    np.testing.assert_allclose(out.frames, 42.0)


def test_crop_checkerboard_bilinear_oracle():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float) * 255
    clip = VideoClip(np.broadcast_to(board, (3, 5, 4, 4)).copy(), 30.0)
    out = crop_window(clip, (0.5, 0.5, 3.0, 3.0), (5, 5))
    for i in range(5):
        for j in range(5):
            y = 0.5 + (i + 0.5) * 3.0 / 5 - 0.5
            x = 0.5 + (j + 0.5) * 3.0 / 5 - 0.5
            assert out.frames[0, 0, i, j] == pytest.approx(bilinear_sample(board, y, x), abs=1e-9)


def test_crop_out_of_bounds():
    clip = VideoClip(np.zeros((3, 5, 8, 8)), 30.0)
    with pytest.raises(ValueError):
        crop_window(clip, (4, 4, 8, 8), (4, 4))


@given(
    top=st.integers(0, 6), left=st.integers(0, 6), h=st.integers(4, 10), w=st.integers(4, 10),
    top2=st.integers(0, 3), left2=st.integers(0, 3), seed=st.integers(0, 1000),
)
def test_crop_composition_pixel_aligned(top, left, h, w, top2, left2, seed):
    H = W = 16
    h, w = min(h, H - top), min(w, W - left)
    h2, w2 = h - top2, w - left2
    if h2 < 1 or w2 < 1:
        return
    # no upsampling: otherwise edge samples clamp inside the first crop but not in the full frame
    out = ((h2 + 1) // 2, (w2 + 1) // 2)
    clip = VideoClip(np.random.default_rng(seed).uniform(0, 255, (3, 5, H, W)), 30.0)
    once = crop_window(clip, (top + top2, left + left2, h2, w2), out)
    twice = crop_window(crop_window(clip, (top, left, h, w), (h, w)), (top2, left2, h2, w2), out)
    np.testing.assert_allclose(twice.frames, once.frames, atol=1e-6)


# augmentation


def test_resample_dead_zone(rng):
    clip, bvp = generate_synthetic_clip(small_spec())
    c2, b2 = augment_temporal_resample(clip, bvp, 80.0, rng)
    assert c2 is clip and b2 is bvp


def test_resample_down_doubles_apparent_hr(rng):
    clip, bvp = generate_synthetic_clip(SyntheticSceneSpec(T=320, H=16, W=16, hr_bpm=60, noise_sigma=0))
    c2, b2 = augment_temporal_resample(clip, bvp, 120.0, rng)
    assert c2.num_frames == 160 and len(b2) == 160
    assert estimate_hr(b2).bpm == pytest.approx(2 * estimate_hr(bvp).bpm, abs=2.0)


def test_resample_up_length(rng):
    clip, bvp = generate_synthetic_clip(small_spec())
    c2, b2 = augment_temporal_resample(clip, bvp, 60.0, rng)
    assert c2.num_frames == 2 * 64 - 1 and len(b2) == 2 * 64 - 1
    np.testing.assert_array_equal(b2.samples[::2], bvp.samples)


@pytest.mark.parametrize("gt_hr", [60.0, 120.0])
def test_resample_keeps_alignment(gt_hr, rng):
    spec = small_spec(T=96)
    clip, bvp = generate_synthetic_clip(spec)
    c2, b2 = augment_temporal_resample(clip, bvp, gt_hr, rng)
    green = c2.frames[1][:, skin_mask(spec)].mean(axis=1)
    a = green - green.mean()
    b = b2.samples - b2.samples.mean()
    xc = np.correlate(a, b, mode="full")
    lag = np.argmax(xc) - (len(b) - 1)
    assert abs(lag) <= 1


def test_hflip_forced_values():
    frames = np.array([[1.0, 2.0], [3.0, 4.0]])
    clip = VideoClip(np.broadcast_to(frames, (3, 5, 2, 2)).copy(), 30.0)
    np.testing.assert_array_equal(augment_hflip(clip, force=True).frames[0, 0], [[2, 1], [4, 3]])


def test_hflip_involution_and_symmetry(rng):
    clip = VideoClip(rng.uniform(0, 255, (3, 5, 4, 6)), 30.0)
    np.testing.assert_array_equal(augment_hflip(augment_hflip(clip, force=True), force=True).frames, clip.frames)
    sym = np.concatenate([clip.frames, clip.frames[..., ::-1]], axis=-1)
    sclip = VideoClip(sym, 30.0)
    np.testing.assert_array_equal(augment_hflip(sclip, force=True).frames, sym)


@given(seed=st.integers(0, 10_000))
def test_hflip_preserves_histograms(seed):
    r = np.random.default_rng(seed)
    clip = VideoClip(r.integers(0, 256, (3, 5, 4, 5)).astype(float), 30.0)
    out = augment_hflip(clip, r)
    for c in range(3):
        for t in range(5):
            np.testing.assert_array_equal(np.sort(out.frames[c, t].ravel()), np.sort(clip.frames[c, t].ravel()))


def test_hflip_is_random():
    clip = VideoClip(np.arange(3 * 5 * 2 * 3, dtype=float).reshape(3, 5, 2, 3), 30.0)
    r = np.random.default_rng(0)
    flips = sum(augment_hflip(clip, r) is not clip for _ in range(200))
    assert 60 < flips < 140


# file formats


@pytest.mark.parametrize("dtype", ["float64", "float32", "uint8"])
def test_clip_roundtrip(tmp_path, dtype):
    clip, _ = generate_synthetic_clip(small_spec(noise_sigma=1.0))
    save_clip(clip, tmp_path / "c", dtype=dtype)
    back = load_clip(tmp_path / "c.json")
    assert back.fps == clip.fps
    if dtype == "float64":
        np.testing.assert_array_equal(back.frames, clip.frames)
    elif dtype == "float32":
        np.testing.assert_allclose(back.frames, clip.frames, rtol=1e-6)
    else:
        np.testing.assert_array_equal(back.frames, np.rint(clip.frames))


def test_clip_blob_is_planar_little_endian(tmp_path):
    frames = np.arange(3 * 5 * 2 * 2, dtype=float).reshape(3, 5, 2, 2)
    save_clip(VideoClip(frames, 25.0), tmp_path / "c")
    raw = np.frombuffer((tmp_path / "c.bin").read_bytes(), dtype="<f8")
    np.testing.assert_array_equal(raw, frames.ravel())


def test_load_rejects_short_clip(tmp_path):
    import json

    save_clip(VideoClip(np.zeros((3, 5, 2, 2)), 30.0), tmp_path / "c")
    header = json.loads((tmp_path / "c.json").read_text())
    header["shape"] = [3, 4, 2, 2]
    (tmp_path / "c.bin").write_bytes(np.zeros(48).tobytes())
    (tmp_path / "c.json").write_text(json.dumps(header))
    with pytest.raises(ValueError):
        load_clip(tmp_path / "c.json")


def test_bvp_roundtrip(tmp_path, rng):
    bvp = BvpSignal(rng.normal(size=50), 30.0)
    save_bvp(bvp, tmp_path / "b.csv")
    back = load_bvp(tmp_path / "b.csv")
    assert back.fs == 30.0
    np.testing.assert_array_equal(back.samples, bvp.samples)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "time_s,value"


def test_bvp_requires_header(tmp_path):
    (tmp_path / "b.csv").write_text("0.0,1.0\n0.1,2.0\n")
    with pytest.raises(ValueError):
        load_bvp(tmp_path / "b.csv")
