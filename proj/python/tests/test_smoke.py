import numpy as np
import pytest

import multidepth as md


def random_depth(rng, h, w):
    return rng.uniform(0.5, 5.0, size=(h, w)).astype(np.float32)


def test_unshuffle_roundtrip():
    rng = np.random.default_rng(0)
    img = rng.random((3, 12, 18), dtype=np.float32)
    subs = md.pixel_unshuffle(img, 3)
    assert len(subs) == 9
    assert subs[0].shape == (3, 4, 6)
    np.testing.assert_array_equal(subs[4], img[:, 1::3, 1::3])
    np.testing.assert_array_equal(md.pixel_shuffle(subs, 3), img)


def test_aggregate_matches_numpy_window():
    rng = np.random.default_rng(1)
    layers = rng.uniform(1.0, 2.0, size=(7, 5, 6)).astype(np.float32)
    out = md.aggregate(layers, k=3)
    s = np.sort(layers.astype(np.float64), axis=0)
    expect = s[2:5].mean(axis=0)
    np.testing.assert_allclose(out, expect, rtol=1e-6)
    assert md.mean_of_k_medians([4.0, 1.0, 3.0, 2.0, 100.0], 3) == pytest.approx(3.0)


def test_metrics_and_scale_invariance():
    rng = np.random.default_rng(2)
    gt = random_depth(rng, 16, 16)
    pred = gt * np.exp(rng.normal(0, 0.1, size=gt.shape)).astype(np.float32)
    K = {"fx": 16.0, "fy": 16.0, "cx": 7.5, "cy": 7.5}
    r = md.evaluate(pred, gt, K)
    assert 0.0 <= r["delta_0.25"] <= r["delta_1"] <= 1.0
    assert r["valid_pixels"] == 256
    assert md.si_log(pred * 2.0, gt) == md.si_log(pred, gt)
    assert md.evaluate(gt, gt, K)["abs_rel"] == 0.0


def test_unproject_and_f_score():
    depth = np.full((4, 5), 2.0, dtype=np.float32)
    depth[0, 0] = 0.0
    K = {"fx": 5.0, "fy": 5.0, "cx": 2.0, "cy": 1.5}
    pts = md.unproject(depth, K)
    assert pts.shape == (19, 3)
    np.testing.assert_allclose(pts[:, 2], 2.0)
    assert md.f_score(pts, pts, 0.01) == 1.0
    assert md.f_score(pts, pts + 10.0, 0.01) == 0.0


def test_scene_and_identity_refine():
    scene = md.generate_scene(seed=3, width=32, height=32)
    assert scene["rgb"].shape == (3, 32, 32)
    depth = scene["depth"]
    assert depth.min() >= 0.5 and depth.max() <= 10.0
    assert scene["masks"].sum() == 32 * 32
    out = md.refine(scene["rgb"], depth, iterations=2, masks=scene["masks"])
    np.testing.assert_array_equal(out, depth)


def test_depth_file_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    d = random_depth(rng, 6, 7)
    d[2, 3] = 0.0
    md.save_depth(tmp_path / "d.pfm", d)
    np.testing.assert_array_equal(md.load_depth(tmp_path / "d.pfm"), d)


def test_errors_are_raised():
    with pytest.raises(md.Error):
        md.pixel_unshuffle(np.zeros((1, 4, 4), np.float32), 0)
    with pytest.raises(md.Error):
        md.load_depth("/nonexistent/file.pfm")
    assert "[mrcm]" in md.default_config("paper")
