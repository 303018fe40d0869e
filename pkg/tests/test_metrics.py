import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtunet.metrics import (
    BettiConfig,
    IoUCounts,
    MetricReport,
    betti_error,
    betti_error_windows,
    connected_components,
    evaluate,
    extract_curve,
    frechet_distance,
    iou_family,
    iou_from_counts,
    longest_path,
)
from fixtures import broken_ring_pair, three_blobs
from oracles import flood_fill_count, frechet_by_enumeration, longest_simple_path


# ------------------------------------------------------------------ components


def test_components_basic():
    assert connected_components(np.zeros((5, 5)))[0] == 0
    diag = np.eye(2, dtype=np.uint8)
    assert connected_components(diag, 8)[0] == 1
    assert connected_components(diag, 4)[0] == 2
    assert connected_components(three_blobs())[0] == 3 == flood_fill_count(three_blobs())


@pytest.mark.parametrize("connectivity", [4, 8])
def test_components_match_flood_fill(connectivity):
    rng = np.random.default_rng(connectivity)
    for _ in range(50):
        m = rng.random((16, 16)) < rng.uniform(0.2, 0.6)
        assert connected_components(m, connectivity)[0] == flood_fill_count(m, connectivity)


# ------------------------------------------------------------------ betti


def test_betti_identical_is_zero():
    m = three_blobs()
    assert betti_error(m, m, BettiConfig(4, 2)) == 0


def test_betti_line_with_gap_whole_image():
    gt = np.zeros((32, 32), np.uint8)
    gt[16, :] = 1
    pred = gt.copy()
    pred[16, 10] = 0
    assert betti_error(pred, gt, BettiConfig(window=32, stride=32)) == 1


def test_betti_window_larger_than_image():
    gt = np.zeros((20, 20), np.uint8)
    gt[5, :] = 1
    pred = gt.copy()
    pred[5, 8] = 0
    assert betti_error_windows(pred, gt, BettiConfig(64, 32)).tolist() == [1.0]


def test_betti_local_discriminator():
    broken, closed = broken_ring_pair()
    assert connected_components(broken)[0] == connected_components(closed)[0] == 1
    whole = BettiConfig(window=48, stride=48)
    assert betti_error(broken, closed, whole) == 0
    assert betti_error(broken, closed, BettiConfig(window=16, stride=8)) > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_betti_symmetric_and_relabel_invariant(seed):
    rng = np.random.default_rng(seed)
    a = (rng.random((24, 24)) < 0.3) * rng.integers(1, 4, (24, 24))
    b = (rng.random((24, 24)) < 0.3) * rng.integers(1, 4, (24, 24))
    cfg = BettiConfig(12, 6)
    assert betti_error(a, b, cfg) == betti_error(b, a, cfg)
    perm = np.array([0, 3, 1, 2])
    assert betti_error(perm[a], perm[b], cfg) == betti_error(a, b, cfg)


def test_betti_window_count():
    gt = np.zeros((64, 96), np.uint8)
    assert len(betti_error_windows(gt, gt, BettiConfig(32, 16))) == 3 * 5


# ------------------------------------------------------------------ curves


def test_frechet_simple_cases():
    a = np.array([[0, x] for x in range(6)])
    assert frechet_distance(a, a) == 0
    assert frechet_distance(a, a + [5, 0]) == 5
    with pytest.raises(ValueError):
        frechet_distance(a, np.zeros((0, 2)))


def test_frechet_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.integers(0, 10, (rng.integers(1, 9), 2))
        b = rng.integers(0, 10, (rng.integers(1, 9), 2))
        assert frechet_distance(a, b) == pytest.approx(frechet_by_enumeration(a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_frechet_properties(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(rng.integers(1, 12), 2))
    b = rng.normal(size=(rng.integers(1, 12), 2))
    d = frechet_distance(a, b)
    assert d == pytest.approx(frechet_distance(b, a), abs=1e-12)
    shift = rng.normal(size=2) * 10
    assert d == pytest.approx(frechet_distance(a + shift, b + shift), abs=1e-9)
    assert d >= max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1])) - 1e-12


def test_extract_curve_thin_line():
    m = np.zeros((10, 20), np.uint8)
    m[4, 3:17] = 2
    curve = extract_curve(m, 2)
    pts = [tuple(p) for p in curve.points]
    assert pts in ([(4, c) for c in range(3, 17)], [(4, c) for c in range(16, 2, -1)])
    assert extract_curve(m, 1) is None


def test_extract_curve_thick_bar():
    m = np.zeros((13, 30), np.uint8)
    m[5:8, 4:24] = 1
    curve = extract_curve(m, 1)
    assert abs(len(curve.points) - 20) <= 2
    assert set(curve.points[:, 0].tolist()) <= {5, 6, 7}


def test_extract_curve_plus_matches_simple_path_oracle():
    m = np.zeros((15, 15), np.uint8)
    m[7, 0:15] = 1
    m[4:11, 7] = 1
    curve = extract_curve(m, 1)
    oracle = longest_simple_path(map(tuple, np.argwhere(m).tolist()))
    ends = {tuple(curve.points[0]), tuple(curve.points[-1])}
    assert ends == {oracle[0], oracle[-1]} == {(7, 0), (7, 14)}
    steps = np.abs(np.diff(curve.points, axis=0)).max(axis=1)
    assert (steps == 1).all()


def test_extract_curve_largest_component_coverage():
    m = np.zeros((20, 20), np.uint8)
    m[2, 1:16] = 1
    m[10, 1:6] = 1
    curve = extract_curve(m, 1)
    assert curve.coverage == pytest.approx(15 / 20)
    assert len(curve.points) == 15


def test_longest_path_empty():
    assert longest_path(np.zeros((4, 4), bool)).shape == (0, 2)


# ------------------------------------------------------------------ IoU


def test_iou_identity_and_disjoint():
    gt = np.zeros((8, 8), np.uint8)
    gt[:, :2] = 1
    gt[:, 4:6] = 2
    res = iou_family(gt, gt, ["curvilinear", "volumetric"])
    assert res == {"iou": 1.0, "miou": 1.0, "c_iou": 1.0, "cm_iou": 1.0, "v_iou": 1.0, "vm_iou": 1.0}
    pred = np.zeros_like(gt)
    pred[:, 2:4] = 1
    pred[:, 4:6] = 2
    res = iou_family(pred, gt, ["curvilinear", "volumetric"])
    assert res["c_iou"] == 0 and res["v_iou"] == 1 and res["miou"] == 0.5


def test_iou_half_overlap_strips():
    gt = np.zeros((8, 8), np.uint8)
    gt[:, 0:4] = 1
    pred = np.zeros_like(gt)
    pred[:, 2:6] = 1
    assert iou_family(pred, gt, ["curvilinear"])["iou"] == pytest.approx(1 / 3)


def test_iou_missing_family_is_none():
    gt = np.ones((4, 4), np.uint8)
    res = iou_family(gt, gt, ["curvilinear"])
    assert res["v_iou"] is None and res["vm_iou"] is None


def test_iou_pooled_vs_mean():
    counts = IoUCounts(np.array([1, 9]), np.array([2, 10]))
    res = iou_from_counts(counts, ["curvilinear", "curvilinear"])
    assert res["iou"] == pytest.approx(10 / 12)
    assert res["miou"] == pytest.approx((0.5 + 0.9) / 2)


# ------------------------------------------------------------------ evaluate


def test_evaluate_identity():
    gt = np.zeros((32, 32), np.uint8)
    gt[5, 2:30] = 1
    gt[20:24, 10:14] = 2
    report = evaluate([gt, gt], [gt, gt], ["curvilinear", "volumetric"], BettiConfig(16, 8))
    assert report.frechet == 0 and report.betti_error == 0
    assert report.iou == report.miou == report.c_iou == report.v_iou == 1.0
    assert report.as_row()["iou"] == "100.0000"


def test_evaluate_absent_penalty():
    gt = np.zeros((30, 40), np.uint8)
    gt[5, 2:30] = 1
    pred = np.zeros_like(gt)
    report = evaluate([pred], [gt], ["curvilinear"], BettiConfig(16, 8))
    assert report.frechet == pytest.approx(math.hypot(30, 40))


def test_evaluate_single_image_matches_per_image():
    rng = np.random.default_rng(3)
    gt = np.zeros((32, 32), np.uint8)
    gt[8, 3:28] = 1
    pred = gt.copy()
    pred[8, 12:14] = 0
    pred[rng.integers(0, 32, 5), rng.integers(0, 32, 5)] = 1
    cfg = BettiConfig(16, 8)
    report = evaluate([pred], [gt], ["curvilinear"], cfg)
    assert report.betti_error == betti_error(pred, gt, cfg)
    assert report.iou == iou_family(pred, gt, ["curvilinear"])["iou"]
    assert report.frechet == frechet_distance(extract_curve(pred, 1), extract_curve(gt, 1))


def test_evaluate_rejects_misaligned():
    with pytest.raises(ValueError):
        evaluate([np.zeros((4, 4))], [], ["curvilinear"])
    with pytest.raises(ValueError):
        evaluate([np.zeros((4, 4))], [np.zeros((5, 4))], ["curvilinear"])


def test_report_csv_and_table():
    report = MetricReport(1.5, 0.25, 0.5, 0.5, 0.5, 0.5, None, None, 1.0, 3, 64, 32)
    lines = report.to_csv().splitlines()
    assert lines[0].startswith("frechet,betti_error,iou")
    assert ",," in lines[1]
    assert "v_iou" in report.table() and " -" in report.table()
