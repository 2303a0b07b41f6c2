import math

import numpy as np
import pytest

from corrhal import evaluation as ev
from corrhal.corrmap import delta_map, uniform_map
from corrhal.geometry import CameraModel, MapFrame, map_to_image
from corrhal.synth import IDENTIFIED, INPAINTED, LABELS, OUTPAINTED

FRAME = MapFrame.for_image(64, 48, 4, 0.5)


def gt_at_cells(cells):
    x = np.array([[c + 0.5, r + 0.5] for r, c in cells], dtype=float)
    return map_to_image(x, FRAME)


def test_histogram_counts_and_overflow():
    h = ev.histogram([0.0, 0.5, 0.99, 1.0, 7.0, -3.0], 0.0, 1.0, 4)
    assert h.counts.tolist() == [2, 0, 1, 3]
    assert h.n == 6 and h.counts.sum() == 6 and h.overflow == 2
    empty = ev.histogram([], 0.0, 1.0)
    assert empty.n == 0 and math.isnan(empty.mean) and empty.counts.sum() == 0


def test_nre_histogram_uniform_and_delta():
    cells = [(3, 4), (10, 20), (20, 30)]
    gt = gt_at_cells(cells)
    labels = [IDENTIFIED, INPAINTED, OUTPAINTED]
    uni = np.stack([uniform_map(FRAME).values] * 3)
    rep = ev.nre_histogram(uni, gt, labels, FRAME)
    assert rep.uniform == pytest.approx(math.log(768))
    u_bin = int(rep.uniform / (rep.uniform + 2) * ev.N_BINS)
    for lab in LABELS:
        h = rep.per_label[lab]
        assert h.counts[u_bin] == 1 and h.counts.sum() == 1
    deltas = np.stack([delta_map(FRAME, r, c).values for r, c in cells])
    rep = ev.nre_histogram(deltas, gt, labels, FRAME)
    for lab in LABELS:
        assert rep.per_label[lab].counts[0] == 1


def test_nre_histogram_missing_label_is_empty():
    gt = gt_at_cells([(3, 4)])
    rep = ev.nre_histogram(np.stack([uniform_map(FRAME).values]), gt, [IDENTIFIED], FRAME)
    assert rep.per_label[OUTPAINTED].n == 0
    arg = ev.argmax_error_histogram(np.stack([uniform_map(FRAME).values]), gt, [IDENTIFIED], FRAME)
    assert math.isnan(arg.e_uniform[INPAINTED])
    csv_text = ev.summary_csv(rep, arg)
    assert csv_text.splitlines()[0] == ",".join(ev.SUMMARY_COLUMNS)
    assert len(csv_text.splitlines()) == 1 + 2 * len(LABELS)


def test_argmax_error_delta_and_uniform():
    rng = np.random.default_rng(0)
    cells = [(int(r), int(c)) for r, c in zip(rng.integers(0, 24, 20), rng.integers(0, 32, 20))]
    gt = gt_at_cells(cells) + rng.uniform(-1.9, 1.9, (20, 2))
    deltas = np.stack([delta_map(FRAME, r, c).values for r, c in cells])
    rep = ev.argmax_error_histogram(deltas, gt, [IDENTIFIED] * 20, FRAME)
    assert rep.per_label[IDENTIFIED].counts.sum() == 20
    assert rep.per_label[IDENTIFIED].median < FRAME.stride
    uni = np.stack([uniform_map(FRAME).values] * 20)
    rep = ev.argmax_error_histogram(uni, gt, [IDENTIFIED] * 20, FRAME)
    corner = map_to_image([[0.5, 0.5]], FRAME)[0]
    assert rep.per_label[IDENTIFIED].median == pytest.approx(np.median(np.linalg.norm(gt - corner, axis=1)))


def test_expected_uniform_error_square_center():
    frame = MapFrame(1, 0, 0, 200, 200)
    eu = ev.expected_uniform_error([[100.0, 100.0]], frame, seed=1)
    assert eu[0] == pytest.approx(0.3826 * 200, rel=0.01)
    assert np.array_equal(eu, ev.expected_uniform_error([[100.0, 100.0]], frame, seed=1))


def brute_force(errors, overlaps, tau_t, tau_r, x):
    hits = [
        e is not None and e[0] <= tau_r and e[1] <= tau_t
        for e, o in zip(errors, overlaps)
        if 0.02 <= o <= x
    ]
    return (sum(hits) / len(hits)) if hits else math.nan, len(hits)


def test_pose_precision_curve():
    overlaps = np.linspace(0.03, 0.8, 12)
    exact = [(0.0, 0.0)] * 12
    assert all(f == 1.0 for _, f, _ in ev.pose_precision_curve(exact, overlaps, 0.1, 20))
    assert all(f == 0.0 for _, f, _ in ev.pose_precision_curve([None] * 12, overlaps, 0.1, 20))
    rng = np.random.default_rng(3)
    errs = [None if rng.random() < 0.2 else (rng.uniform(0, 40), rng.uniform(0, 0.5)) for _ in range(50)]
    ovl = rng.uniform(0.0, 0.85, 50)
    rows = ev.pose_precision_curve(errs, ovl, 0.25, 20.0)
    counts = [n for _, _, n in rows]
    assert counts == sorted(counts)
    for x, frac, n in rows:
        ref, n_ref = brute_force(errs, ovl, 0.25, 20.0, x)
        assert n == n_ref
        assert (math.isnan(frac) and math.isnan(ref)) or frac == pytest.approx(ref)
    text = ev.curve_csv({(0.25, 20.0): rows})
    assert text.splitlines()[0] == ",".join(ev.CURVE_COLUMNS)


def test_success_rate():
    errs = [(1.0, 0.1), (30.0, 0.1), None, (1.0, 0.01)]
    assert ev.success_rate(errs, 0.05, 20) == 0.25
    assert math.isnan(ev.success_rate([], 1, 1))


def test_fov_of_gamma():
    fx = 32 / math.tan(math.radians(30))
    cam = CameraModel(fx, fx, 32.0, 24.0, 64, 48)
    assert ev.fov_of_gamma(cam, 0.0) == pytest.approx(60.0)
    assert ev.fov_of_gamma(cam, 0.5) == pytest.approx(98.2132, abs=1e-3)
    vals = [ev.fov_of_gamma(cam, g) for g in np.linspace(0, 2, 9)]
    assert np.all(np.diff(vals) > 0)
    assert ev.fov_of_gamma(cam, 0.0, "vertical") < 60.0
    with pytest.raises(ValueError):
        ev.fov_of_gamma(cam, -0.1)


def test_oracle_maps_only_inside(small_pairs):
    pair = small_pairs[0]
    maps, inside = ev.oracle_maps(pair.keypoints.gt, FRAME)
    assert len(maps) == inside.sum()
    np.testing.assert_allclose(maps.sum(axis=(1, 2)), 1.0)


def test_histograms_csv_deterministic():
    gt = gt_at_cells([(3, 4), (5, 6)])
    maps = np.stack([delta_map(FRAME, 3, 4).values, uniform_map(FRAME).values])
    labels = [IDENTIFIED, OUTPAINTED]
    a = ev.histograms_csv(ev.nre_histogram(maps, gt, labels, FRAME), ev.argmax_error_histogram(maps, gt, labels, FRAME))
    b = ev.histograms_csv(ev.nre_histogram(maps, gt, labels, FRAME), ev.argmax_error_histogram(maps, gt, labels, FRAME))
    assert a == b
    assert len(a.splitlines()) == 1 + 2 * len(LABELS) * ev.N_BINS
