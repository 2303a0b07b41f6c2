"""Correspondence maps and the neural reprojection error (NRE).

A map stores one probability per cell; the probability of cell ``(r, c)``
lives at map coordinate ``(c + 0.5, r + 0.5)``.  The NRE of a query point is
minus the bilinear interpolation of the *log* probabilities around it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, NonFiniteInput, ShapeMismatch
from .geometry import MapFrame, map_to_image

EPS_P = 1e-12
LOG_EPS_P = math.log(EPS_P)
COST_OUT = -LOG_EPS_P

MAGIC = b"CMAP"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class CorrespondenceMap:
    """Probability grid over a frame.

    ``log_probs`` optionally carries the log-probabilities computed directly
    from logits, which avoids the rounding of ``log(exp(.))``.
    """

    values: np.ndarray
    frame: MapFrame
    log_probs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.frame.map_h, self.frame.map_w):
            raise ShapeMismatch(
                "map values do not match the frame",
                shape=v.shape, frame=(self.frame.map_h, self.frame.map_w),
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.log_probs is not None:
            lg = np.maximum(np.asarray(self.log_probs, dtype=float), LOG_EPS_P)
            if lg.shape != v.shape:
                raise ShapeMismatch("log_probs must match the values", shape=lg.shape)
            lg.setflags(write=False)
            object.__setattr__(self, "log_probs", lg)

    @property
    def log_values(self) -> np.ndarray:
        return self.log_probs if self.log_probs is not None else clamped_log(self.values)


def clamped_log(values) -> np.ndarray:
    return np.log(np.maximum(np.asarray(values, dtype=float), EPS_P))


def softmax2d(logits) -> np.ndarray:
    """Joint softmax over the last two axes."""
    logits = np.asarray(logits, dtype=float)
    flat = logits.reshape(*logits.shape[:-2], -1)
    flat = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(flat)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(logits.shape)


def log_softmax2d(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    flat = logits.reshape(*logits.shape[:-2], -1)
    flat = flat - flat.max(axis=-1, keepdims=True)
    flat = flat - np.log(np.exp(flat).sum(axis=-1, keepdims=True))
    return flat.reshape(logits.shape)


def normalize(logits, frame: MapFrame) -> CorrespondenceMap:
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits must be finite")
    return CorrespondenceMap(softmax2d(logits), frame, log_softmax2d(logits))


def uniform_map(frame: MapFrame) -> CorrespondenceMap:
    shape = (frame.map_h, frame.map_w)
    return CorrespondenceMap(np.full(shape, 1.0 / frame.n_cells), frame, np.full(shape, -uniform_nre(frame)))


def uniform_nre(frame: MapFrame) -> float:
    return math.log(frame.map_w * frame.map_h)


def interp_log(log_values, x, y, with_grad: bool = False):
    """Bilinear interpolation of log-probability grids at map coordinates.

    ``log_values`` is ``(N, H, W)`` (or ``(H, W)``); ``x``/``y`` broadcast
    against ``(N,)``, so a ``(P, N)`` batch queries every map ``P`` times.
    Returns the NRE per query (``COST_OUT`` outside the map) and, if
    requested, its gradient with respect to ``(x, y)``.
    """
    L = np.asarray(log_values, dtype=float)
    single = L.ndim == 2
    if single:
        L = L[None]
    n, h, w = L.shape
    shape = np.broadcast_shapes(np.shape(x), np.shape(y), (n,))
    x = np.broadcast_to(np.asarray(x, dtype=float), shape)
    y = np.broadcast_to(np.asarray(y, dtype=float), shape)
    idx = np.broadcast_to(np.arange(n), shape)
    finite = np.isfinite(x) & np.isfinite(y)
    inside = finite & (x >= 0) & (x <= w) & (y >= 0) & (y <= h)
    u = np.where(inside, x, 0.5) - 0.5
    v = np.where(inside, y, 0.5) - 0.5
    du = ((u > 0) & (u < w - 1)).astype(float)
    dv = ((v > 0) & (v < h - 1)).astype(float)
    u = np.clip(u, 0.0, w - 1)
    v = np.clip(v, 0.0, h - 1)
    c0 = np.minimum(np.floor(u), max(w - 2, 0)).astype(int)
    r0 = np.minimum(np.floor(v), max(h - 2, 0)).astype(int)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = u - c0
    fv = v - r0
    l00 = L[idx, r0, c0]
    l01 = L[idx, r0, c1]
    l10 = L[idx, r1, c0]
    l11 = L[idx, r1, c1]
    # lerp form: reproduces a constant grid and the cell-center values exactly
    top = l00 + fu * (l01 - l00)
    bottom = l10 + fu * (l11 - l10)
    val = top + fv * (bottom - top)
    cost = np.where(inside, -val, COST_OUT)
    if single and shape == (1,):
        cost = cost[0]
    if not with_grad:
        return cost
    gx = -((1 - fv) * (l01 - l00) + fv * (l11 - l10)) * du
    gy = -((1 - fu) * (l10 - l00) + fu * (l11 - l01)) * dv
    grad = np.stack([np.where(inside, gx, 0.0), np.where(inside, gy, 0.0)], axis=-1)
    if single and shape == (1,):
        grad = grad[0]
    return cost, grad


def nre_at(cmap: CorrespondenceMap, x) -> float:
    """NRE (nats) of map coordinate ``x``; ``COST_OUT`` outside the map."""
    x = np.asarray(x, dtype=float)
    return float(interp_log(cmap.log_values, x[0], x[1]))


def nre_grad(cmap: CorrespondenceMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return interp_log(cmap.log_values, x[0], x[1], with_grad=True)[1]


def argmax_cell(values) -> tuple[int, int]:
    """Row-major first maximum of a 2D grid."""
    values = np.asarray(values)
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(values)), values.shape))


def argmax_to_image(cmap: CorrespondenceMap) -> tuple[np.ndarray, float]:
    r, c = argmax_cell(cmap.values)
    pixel = map_to_image(np.array([c + 0.5, r + 0.5]), cmap.frame)
    return pixel, float(cmap.values[r, c])


def argmax_batch(values, frame: MapFrame) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``argmax_to_image`` over a ``(N, H, W)`` stack."""
    values = np.asarray(values)
    n = values.shape[0]
    flat = values.reshape(n, -1)
    k = np.argmax(flat, axis=1)
    r, c = np.divmod(k, frame.map_w)
    pix = map_to_image(np.stack([c + 0.5, r + 0.5], axis=-1), frame)
    return pix, flat[np.arange(n), k]


def write_maps(path, values, frame: MapFrame) -> None:
    """Binary map stack: magic, u32 header, little-endian f32 cells."""
    values = np.asarray(values)
    if values.ndim == 2:
        values = values[None]
    n, h, w = values.shape
    if (h, w) != (frame.map_h, frame.map_w):
        raise ShapeMismatch("map stack does not match the frame")
    header = MAGIC + struct.pack(
        "<7I", FORMAT_VERSION, n, h, w, frame.stride, frame.pad_x, frame.pad_y
    )
    Path(path).write_bytes(header + values.astype("<f4").tobytes())


def read_maps(path) -> tuple[np.ndarray, MapFrame]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("not a correspondence-map file", path=str(path))
    version, n, h, w, stride, pad_x, pad_y = struct.unpack_from("<7I", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError("unsupported map file version", version=version)
    body = np.frombuffer(data, dtype="<f4", offset=4 + 28)
    if body.size != n * h * w:
        raise FormatError("truncated map file", path=str(path))
    frame = MapFrame(stride, pad_x, pad_y, w, h)
    return body.reshape(n, h, w).astype(np.float64), frame


def write_pgm(path, values, log_scale: bool = True) -> None:
    """8-bit portable graymap preview of one map (brightest = most likely)."""
    v = clamped_log(values) if log_scale else np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    img = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = np.round(img * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def peaked_maps(x, frame: MapFrame, sigma: float = 1.0) -> np.ndarray:
    """Gaussian maps (``sigma`` in cells) centered on map coordinates ``x`` (N, 2).

    Used as "oracle" predictions in evaluations and tests.  A point outside
    the map gets a uniform map, since the map cannot represent it.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    cx = np.arange(frame.map_w) + 0.5
    cy = np.arange(frame.map_h) + 0.5
    dx = (cx[None, None, :] - x[:, 0, None, None]) ** 2
    dy = (cy[None, :, None] - x[:, 1, None, None]) ** 2
    out = softmax2d(-(dx + dy) / (2 * sigma * sigma))
    outside = (x[:, 0] < 0) | (x[:, 0] > frame.map_w) | (x[:, 1] < 0) | (x[:, 1] > frame.map_h)
    out[outside] = 1.0 / frame.n_cells
    return out


def delta_map(frame: MapFrame, row: int, col: int) -> CorrespondenceMap:
    v = np.zeros((frame.map_h, frame.map_w))
    v[row, col] = 1.0
    return CorrespondenceMap(v, frame)
