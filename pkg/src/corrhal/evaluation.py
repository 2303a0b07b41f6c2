"""Evaluation tables: NRE and argmax-error histograms, pose precision curves."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .corrmap import argmax_batch, clamped_log, interp_log, peaked_maps, uniform_nre
from .geometry import CameraModel, MapFrame, image_to_map, pose_error
from .pose import PoseConfig, estimate
from .synth import LABELS

N_BINS = 40
EU_SAMPLES = 10_000


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    median: float
    n: int
    overflow: int = 0  # samples at or beyond the last edge, already counted in the last bin

    def rows(self, label: str, quantity: str):
        for i in range(len(self.counts)):
            yield {
                "quantity": quantity,
                "label": label,
                "bin_lo": f"{self.edges[i]:.6f}",
                "bin_hi": f"{self.edges[i + 1]:.6f}",
                "count": int(self.counts[i]),
            }


def histogram(values, lo: float, hi: float, bins: int = N_BINS) -> Histogram:
    """Uniform bins on ``[lo, hi]``; values past either end land in the end bins."""
    values = np.asarray(values, dtype=float)
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.floor((values - lo) / (hi - lo) * bins).astype(int), 0, bins - 1) if len(values) else np.zeros(0, int)
    counts = np.bincount(idx, minlength=bins)
    mean = float(values.mean()) if len(values) else math.nan
    median = float(np.median(values)) if len(values) else math.nan
    return Histogram(edges, counts, mean, median, len(values), int(np.sum(values >= hi)))


def _per_label(labels):
    labels = np.asarray(labels, dtype=object)
    return {lab: np.flatnonzero(labels == lab) for lab in LABELS}


def nre_at_ground_truth(maps, gt_pixels, frame: MapFrame) -> np.ndarray:
    x = image_to_map(gt_pixels, frame)
    return interp_log(clamped_log(maps), x[:, 0], x[:, 1]) if len(x) else np.zeros(0)


@dataclass
class NreReport:
    per_label: dict
    uniform: float


def nre_histogram(maps, gt_pixels, labels, frame: MapFrame, bins: int = N_BINS) -> NreReport:
    """Per-label histogram of the NRE at the ground-truth correspondent.

    Range is ``[0, ln|Omega| + 2]``; out-of-map correspondents cost
    ``-ln 1e-12`` and land in the last bin (reported as overflow).
    """
    maps = np.asarray(maps, dtype=float)
    nre = nre_at_ground_truth(maps, np.asarray(gt_pixels, dtype=float).reshape(-1, 2), frame)
    u = uniform_nre(frame)
    return NreReport({lab: histogram(nre[idx], 0.0, u + 2.0, bins) for lab, idx in _per_label(labels).items()}, u)


def expected_uniform_error(gt_pixels, frame: MapFrame, samples: int = EU_SAMPLES, seed: int = 0, chunk: int = 512) -> np.ndarray:
    """Monte-Carlo mean distance (pixels) from a uniform point of the map to each ground truth."""
    gt = np.asarray(gt_pixels, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    s = frame.stride
    lo = np.array([-frame.pad_x * s, -frame.pad_y * s], dtype=float)
    size = np.array([frame.map_w * s, frame.map_h * s], dtype=float)
    pts = lo + rng.random((samples, 2)) * size
    out = np.empty(len(gt))
    for i in range(0, len(gt), chunk):
        g = gt[i : i + chunk]
        out[i : i + chunk] = np.linalg.norm(pts[None, :, :] - g[:, None, :], axis=-1).mean(axis=1)
    return out


@dataclass
class ArgmaxReport:
    per_label: dict
    e_uniform: dict  # label -> mean E_U over that label's keypoints


def argmax_error_histogram(maps, gt_pixels, labels, frame: MapFrame, bins: int = N_BINS, seed: int = 0) -> ArgmaxReport:
    """Per-label histogram of ``|argmax - ground truth|`` in target pixels, plus E_U."""
    maps = np.asarray(maps, dtype=float)
    gt = np.asarray(gt_pixels, dtype=float).reshape(-1, 2)
    if len(gt):
        pix, _ = argmax_batch(maps, frame)
        err = np.linalg.norm(pix - gt, axis=1)
        eu = expected_uniform_error(gt, frame, seed=seed)
    else:
        err = eu = np.zeros(0)
    diag = math.hypot(frame.map_w, frame.map_h) * frame.stride
    per_label, e_u = {}, {}
    for lab, idx in _per_label(labels).items():
        per_label[lab] = histogram(err[idx], 0.0, diag, bins)
        e_u[lab] = float(eu[idx].mean()) if len(idx) else math.nan
    return ArgmaxReport(per_label, e_u)


def pose_precision_curve(errors, overlaps, tau_t: float, tau_r: float, xs=None, lo: float = 0.02):
    """Fraction of pairs with overlap in ``[lo, x]`` whose pose is within thresholds.

    ``errors`` holds ``(rot_deg, trans)`` per pair or ``None`` for a failed
    estimate (always incorrect).  Returns rows ``(x, fraction, count)``;
    ``fraction`` is NaN when no pair falls in the range.
    """
    overlaps = np.asarray(overlaps, dtype=float)
    if xs is None:
        xs = np.round(np.arange(0.05, 0.801, 0.05), 2)
    correct = np.array(
        [e is not None and e[0] <= tau_r and e[1] <= tau_t for e in errors], dtype=bool
    )
    rows = []
    for x in xs:
        sel = (overlaps >= lo) & (overlaps <= x)
        n = int(sel.sum())
        rows.append((float(x), float(correct[sel].mean()) if n else math.nan, n))
    return rows


def oracle_maps(gt_pixels, frame: MapFrame, sigma: float = 1.0):
    """Gaussian maps at the ground truth for correspondents the map can hold.

    Returns ``(maps, inside)``; ``maps`` covers only the ``inside`` rows.
    """
    x = image_to_map(np.asarray(gt_pixels, dtype=float).reshape(-1, 2), frame)
    inside = (x[:, 0] >= 0) & (x[:, 0] <= frame.map_w) & (x[:, 1] >= 0) & (x[:, 1] <= frame.map_h)
    return peaked_maps(x[inside], frame, sigma), inside


def oracle_pose_errors(pairs, frame: MapFrame, outlier_fraction: float = 0.0, seed: int = 0, config: PoseConfig | None = None):
    """Pose errors ``(rot_deg, trans)`` per pair from oracle maps (``None`` if failed).

    A random ``outlier_fraction`` of the maps is replaced by uniform maps.
    """
    rng = np.random.default_rng(seed)
    out = []
    for pair in pairs:
        kp = pair.keypoints
        maps, inside = oracle_maps(kp.gt, frame)
        bad = rng.random(len(maps)) < outlier_fraction
        maps[bad] = 1.0 / frame.n_cells
        est = estimate(maps, kp.p_s[inside], kp.d_s[inside], pair.source.camera, pair.target.camera, frame, config)
        out.append(pose_error(est.pose, pair.pose_ts) if est.ok else None)
    return out


def success_rate(errors, tau_t: float, tau_r: float) -> float:
    """Fraction of entries within both thresholds; failures count as misses."""
    if not errors:
        return math.nan
    return sum(e is not None and e[0] <= tau_r and e[1] <= tau_t for e in errors) / len(errors)


def fov_of_gamma(cam: CameraModel, gamma: float, axis: str = "horizontal") -> float:
    """Field of view (degrees) covered by a map padded by ``gamma`` per side."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    half, f = (cam.width / 2, cam.fx) if axis == "horizontal" else (cam.height / 2, cam.fy)
    return math.degrees(2 * math.atan((1 + 2 * gamma) * half / f))


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


HIST_COLUMNS = ("quantity", "label", "bin_lo", "bin_hi", "count")
SUMMARY_COLUMNS = ("quantity", "label", "n", "mean", "median", "overflow", "reference")
CURVE_COLUMNS = ("tau_t", "tau_r", "overlap_max", "fraction", "pairs")


def histograms_csv(nre: NreReport, arg: ArgmaxReport) -> str:
    rows = []
    for lab in LABELS:
        rows.extend(nre.per_label[lab].rows(lab, "nre"))
    for lab in LABELS:
        rows.extend(arg.per_label[lab].rows(lab, "argmax_error_px"))
    return _csv(rows, HIST_COLUMNS)


def summary_csv(nre: NreReport, arg: ArgmaxReport) -> str:
    rows = []
    for quantity, rep, ref in (("nre", nre.per_label, lambda lab: nre.uniform), ("argmax_error_px", arg.per_label, lambda lab: arg.e_uniform[lab])):
        for lab in LABELS:
            h = rep[lab]
            rows.append(
                {
                    "quantity": quantity,
                    "label": lab,
                    "n": h.n,
                    "mean": f"{h.mean:.6f}",
                    "median": f"{h.median:.6f}",
                    "overflow": h.overflow,
                    "reference": f"{ref(lab):.6f}",
                }
            )
    return _csv(rows, SUMMARY_COLUMNS)


def curve_csv(curves: dict) -> str:
    """``curves`` maps ``(tau_t, tau_r)`` to ``pose_precision_curve`` rows."""
    rows = []
    for (tt, tr), pts in curves.items():
        for x, frac, n in pts:
            rows.append(
                {"tau_t": f"{tt:.6f}", "tau_r": f"{tr:.6f}", "overlap_max": f"{x:.2f}", "fraction": f"{frac:.6f}", "pairs": n}
            )
    return _csv(rows, CURVE_COLUMNS)
