import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import confidence_oracle, displacement_oracle
from radardepth.geometry import RadarPoint, SparseDepthImage
from radardepth.labelgen import (
    LabelParams, adaptive_threshold, build_labels, confidence_label, displacement_label,
)


def _pt(u, v, d):
    return RadarPoint((0.0, 0.0, d), float(u), float(v), float(d))


def _gt(shape=(60, 60)):
    return np.zeros(shape)


def test_adaptive_threshold_bands():
    assert adaptive_threshold(20.0) == 0.5
    assert adaptive_threshold(40.0) == 0.75
    assert adaptive_threshold(60.0) == 1.0
    assert adaptive_threshold(30.0) == 0.75
    assert adaptive_threshold(50.0) == 0.75
    assert adaptive_threshold(29.999) == 0.5
    assert adaptive_threshold(50.001) == 1.0
    with pytest.raises(ValueError):
        adaptive_threshold(0.0)


def test_confidence_three_conforming():
    d = _gt()
    d[30, 30] = d[31, 29] = d[28, 32] = 20.2
    assert confidence_label(_pt(30, 30, 20.0), SparseDepthImage.from_depth(d)) == (1, True)


def test_confidence_all_too_far():
    d = _gt()
    d[29:32, 29:32] = 21.0
    assert confidence_label(_pt(30, 30, 20.0), SparseDepthImage.from_depth(d)) == (0, True)


def test_confidence_two_conforming_is_not_enough():
    d = _gt()
    d[30, 30] = d[31, 31] = 20.1
    assert confidence_label(_pt(30, 30, 20.0), SparseDepthImage.from_depth(d)) == (0, True)


def test_confidence_no_lidar_is_invalid():
    assert confidence_label(_pt(30, 30, 20.0), SparseDepthImage.from_depth(_gt())) == (0, False)


def test_confidence_outside_window_ignored():
    d = _gt()
    d[30, 33] = d[30, 34] = d[30, 35] = 20.0  # column offset 3..5, outside 5x5
    assert confidence_label(_pt(30, 30, 20.0), SparseDepthImage.from_depth(d)) == (0, False)


def test_displacement_to_offset_cluster():
    d = _gt()
    # windows holding the whole 3x3 block center on rows 28-30, cols 32-34;
    # the nearest of those to (row 31, col 30) is (30, 32)
    d[28:31, 32:35] = 20.1
    disp, degenerate = displacement_label(_pt(30, 31, 20.0), SparseDepthImage.from_depth(d))
    assert disp == (2, -1) and not degenerate


def test_displacement_unique_window():
    d = _gt()
    d[26:31, 31:36] = 40.0  # full 5x5 window centered at (28, 33)
    disp, _ = displacement_label(_pt(30, 30, 40.2), SparseDepthImage.from_depth(d))
    assert disp == (3, -2)


def test_displacement_centered_mass():
    d = _gt()
    d[28:33, 28:33] = 10.0
    assert displacement_label(_pt(30, 30, 10.0), SparseDepthImage.from_depth(d)) == ((0, 0), False)


def test_displacement_degenerate():
    d = _gt()
    d[10, 10] = 5.0
    assert displacement_label(_pt(30, 30, 50.0), SparseDepthImage.from_depth(d)) == ((0, 0), True)


def test_threshold_consistency_between_labels():
    # d = 40 gives tau 0.75: pixels at 40.6 conform for both labels
    d = _gt()
    d[30, 30] = d[30, 31] = d[31, 30] = 40.6
    gt = SparseDepthImage.from_depth(d)
    assert confidence_label(_pt(30, 30, 40.0), gt)[0] == 1
    assert displacement_label(_pt(30, 30, 40.0), gt)[1] is False


def _random_instance(rng, shape=(48, 56)):
    H, W = shape
    depth = np.zeros(shape)
    mask = rng.random(shape) < rng.uniform(0.02, 0.5)
    base = rng.uniform(5, 70)
    depth[mask] = base + rng.normal(0, rng.uniform(0.2, 3.0), mask.sum())
    depth[depth <= 0] = 0
    u, v = rng.integers(0, W), rng.integers(0, H)
    return depth, u, v, base + rng.normal(0, 0.5)


def test_labels_match_bruteforce_oracles():
    rng = np.random.default_rng(11)
    params = LabelParams(search_neighborhood=(15, 21), inner_window=(3, 5))
    for _ in range(60):
        depth, u, v, d = _random_instance(rng)
        gt = SparseDepthImage.from_depth(depth)
        p = _pt(u, v, d)
        lst = depth.tolist()
        assert confidence_label(p, gt, params) == confidence_oracle(lst, v, u, d)
        assert displacement_label(p, gt, params) == displacement_oracle(lst, v, u, d, (15, 21), (3, 5))


def test_displacement_within_half_search_extent():
    rng = np.random.default_rng(5)
    params = LabelParams(search_neighborhood=(11, 7), inner_window=(3, 3))
    for _ in range(50):
        depth, u, v, d = _random_instance(rng)
        (du, dv), _ = displacement_label(_pt(u, v, d), SparseDepthImage.from_depth(depth), params)
        assert abs(du) <= 3 and abs(dv) <= 5


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.integers(0, 19), c=st.integers(0, 19))
def test_adding_conforming_pixel_never_drops_label(seed, r, c):
    rng = np.random.default_rng(seed)
    depth = np.where(rng.random((20, 20)) < 0.3, rng.uniform(9, 11, (20, 20)), 0.0)
    p = _pt(10, 10, 10.0)
    before = confidence_label(p, SparseDepthImage.from_depth(depth))[0]
    depth[r, c] = 10.1
    after = confidence_label(p, SparseDepthImage.from_depth(depth))[0]
    assert after >= before


def test_build_labels_empty_and_invalid():
    gt = SparseDepthImage.from_depth(_gt())
    assert build_labels([], gt) == []
    (lab,) = build_labels([_pt(30, 30, 20.0)], gt)
    assert not lab.is_valid and lab.conf_label == 0


def test_build_labels_composition_and_order_invariance():
    rng = np.random.default_rng(2)
    depth = np.where(rng.random((50, 50)) < 0.3, rng.uniform(10, 14, (50, 50)), 0.0)
    gt = SparseDepthImage.from_depth(depth)
    pts = [_pt(u, v, d) for u, v, d in zip(rng.integers(0, 50, 50), rng.integers(0, 50, 50), rng.uniform(9, 15, 50))]
    labels = build_labels(pts, gt)
    for p, lab in zip(pts, labels):
        assert (lab.conf_label, lab.is_valid) == confidence_label(p, gt)
        assert (lab.disp_label, lab.degenerate) == displacement_label(p, gt)
    perm = rng.permutation(50)
    shuffled = build_labels([pts[i] for i in perm], gt)
    assert [shuffled[j] for j in np.argsort(perm)] == labels


def test_label_params_validation():
    with pytest.raises(ValueError):
        LabelParams(conf_neighborhood=(4, 5))
    with pytest.raises(ValueError):
        LabelParams(search_neighborhood=(3, 3), inner_window=(5, 5))
    with pytest.raises(ValueError):
        LabelParams(min_count=0)
