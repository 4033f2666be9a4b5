import numpy as np
import pytest
from scipy.stats import binom

from radardepth import align, labelgen, synth
from radardepth.synth import SceneConfig, generate, sample_lidar

CLEAN = dict(radar_noise=0.0, mono_noise=0.0, outlier_fraction=0.0)


def _frames_equal(a, b):
    for name in ("gt_depth", "mono_inv", "image", "radar_xyz", "outlier"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.lidar.depth.tobytes() == b.lidar.depth.tobytes()


def test_same_seed_bitwise_identical():
    _frames_equal(generate(SceneConfig(seed=4)), generate(SceneConfig(seed=4)))


def test_different_seeds_differ():
    assert generate(SceneConfig(seed=1)).gt_depth.tobytes() != generate(SceneConfig(seed=2)).gt_depth.tobytes()


def test_depth_range_and_sky():
    cfg = SceneConfig(seed=3, mono_noise=0.01)
    f = generate(cfg)
    surf = ~f.sky
    assert (f.gt_depth[surf] >= 2.0).all() and (f.gt_depth[surf] <= 80.0).all()
    assert (f.gt_depth[f.sky] == 0).all()
    assert (f.mono_inv[f.sky] == 0).all() and (f.mono_inv[surf] > 0).all()
    assert ((f.image >= 0) & (f.image <= 1)).all()


def test_clean_inverse_depth_is_affine():
    cfg = SceneConfig(seed=5, affine_a=2.0, affine_b=0.3, **CLEAN)
    f = generate(cfg)
    surf = ~f.sky
    np.testing.assert_allclose(f.mono_inv[surf], 2.0 / f.gt_depth[surf] + 0.3, rtol=1e-15)


def test_clean_frame_alignment_recovers_planted():
    cfg = SceneConfig(seed=6, affine_a=2.0, affine_b=0.3, **CLEAN)
    f = generate(cfg)
    anchors = align.screen_and_refine(f.radar, np.ones(len(f.radar)), np.zeros((len(f.radar), 2)))
    al = align.select_threshold(anchors, f.mono_inv)
    assert al.alpha == pytest.approx(0.5, abs=1e-9)
    assert al.beta == pytest.approx(-0.15, abs=1e-9)


def test_radar_inliers_near_surface():
    cfg = SceneConfig(seed=2, radar_noise=0.1)
    f = generate(cfg)
    for p, out in zip(f.radar, f.outlier):
        if not out:
            assert abs(p.depth - f.gt_depth[p.pixel]) <= 3 * 0.1 + 1e-9


def test_planted_labels():
    cfg = SceneConfig(seed=7, outlier_fraction=0.4, lidar_fraction=0.3)
    f = generate(cfg)
    labels = labelgen.build_labels(f.radar, f.lidar)
    assert [lab.conf_label for lab in labels] == [int(not o) for o in f.outlier]
    for lab, out in zip(labels, f.outlier):
        if out:
            assert lab.degenerate and lab.disp_label == (0, 0)


def test_outlier_depth_error_at_least_five_tau():
    f = generate(SceneConfig(seed=8, outlier_fraction=0.5))
    for p, out in zip(f.radar, f.outlier):
        if out:
            assert abs(p.depth - f.gt_depth[p.pixel]) >= 5 * labelgen.adaptive_threshold(p.depth)


def test_outlier_fraction_within_binomial_bounds():
    rho, k = 0.2, 64
    zero_frac = []
    for seed in range(30):
        f = generate(SceneConfig(seed=seed, outlier_fraction=rho, radar_count=k))
        labels = labelgen.build_labels(f.radar, f.lidar)
        zero_frac.append(sum(lab.conf_label == 0 for lab in labels))
    n = 30 * k
    lo, hi = binom.ppf(0.005, n, rho), binom.ppf(0.995, n, rho)
    assert lo <= sum(zero_frac) <= hi


def test_sample_lidar_full_fraction():
    gt = generate(SceneConfig(seed=1)).gt_depth
    s = sample_lidar(gt, 1.0)
    np.testing.assert_array_equal(s.depth, gt)


def test_sample_lidar_density():
    gt = np.random.default_rng(0).uniform(2, 80, (352, 640))
    s = sample_lidar(gt, 0.01, seed=3)
    assert abs(s.valid.sum() - 2252.8) <= 0.05 * 2252.8
    np.testing.assert_array_equal(s.depth[s.valid], gt[s.valid])


def test_sample_lidar_seeds_differ_same_density():
    gt = np.random.default_rng(0).uniform(2, 80, (60, 80))
    masks = [sample_lidar(gt, 0.1, seed=s).valid for s in range(30)]
    assert len({m.tobytes() for m in masks}) == 30
    counts = {int(m.sum()) for m in masks}
    assert counts == {480}
    per_pixel = np.mean(masks, axis=0)
    assert abs(per_pixel.mean() - 0.1) < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(affine_a=0)
    with pytest.raises(ValueError):
        SceneConfig(outlier_fraction=1.5)
    with pytest.raises(ValueError):
        SceneConfig(radar_noise=0.5)
    with pytest.raises(ValueError):
        SceneConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        generate(SceneConfig(camera_height=-1.5, n_boxes=0))


def test_bundle_round_trip(tmp_path):
    f = generate(SceneConfig(seed=9))
    files = synth.write_bundle(f, tmp_path)
    assert sorted(p.name for p in files) == sorted(synth.BUNDLE_FILES)
    b = synth.read_bundle(tmp_path)
    assert len(b.radar) == len(f.radar)
    for p, q in zip(b.radar, f.radar):
        assert p.pixel == q.pixel and p.depth == pytest.approx(q.depth, rel=1e-12)
    np.testing.assert_allclose(b.gt.depth, f.gt_depth, rtol=1e-6)
    assert np.max(np.abs(b.image - f.image)) <= 1 / 65535
    assert b.meta["a"] == f.config.affine_a and b.meta["rho"] == f.config.outlier_fraction


def test_confidence_task_is_separable():
    for s in synth.confidence_task(5, 8, seed=1):
        g = s.patches.mean(axis=(1, 2, 3))
        np.testing.assert_array_equal(s.conf_label, (s.features[:, 2] < g).astype(float))
