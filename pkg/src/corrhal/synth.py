"""Procedural textured-plane scenes with exact depth, pose and visibility.

A scene is an unbounded, slanted background plane plus a few
rectangular occluders floating in front of it.  Everything is a pure function
of ``(seed, config)``, so pairs can be regenerated from their JSON record.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corrmap import read_maps, write_maps
from .errors import InvalidConfig, UncoveredFrustum
from .geometry import (
    CameraModel,
    MapFrame,
    RigidPose,
    lift,
    pose_compose,
    pose_inverse,
    rot_x,
    rot_y,
    rot_z,
    warp,
)

IDENTIFIED = "identified"
INPAINTED = "inpainted"
OUTPAINTED = "outpainted"
LABELS = (IDENTIFIED, INPAINTED, OUTPAINTED)

CYCLE_PIXEL_TOL = 1.0
MIN_TARGET_DEPTH = 0.05
LATTICE = 16


def default_camera() -> CameraModel:
    return CameraModel(fx=50.0, fy=50.0, cx=32.0, cy=24.0, width=64, height=48)


@dataclass(frozen=True)
class SceneConfig:
    n_layers: int = 3
    depth_range: tuple[float, float] = (2.5, 8.0)
    texture_octaves: int = 3
    background_tilt_deg: float = 30.0

    def validate(self):
        if self.n_layers < 1:
            raise InvalidConfig("a scene needs at least the background layer", n_layers=self.n_layers)
        near, far = self.depth_range
        if not 0 < near < far:
            raise InvalidConfig("depth_range must satisfy 0 < near < far", depth_range=self.depth_range)
        if self.texture_octaves < 1:
            raise InvalidConfig("texture_octaves must be >= 1")
        if not 0 <= self.background_tilt_deg < 60:
            raise InvalidConfig("background_tilt_deg must lie in [0, 60)")

    @property
    def scale(self) -> float:
        """Scene depth range; pose thresholds are expressed as fractions of it."""
        return self.depth_range[1] - self.depth_range[0]

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            int(d["n_layers"]),
            tuple(float(v) for v in d["depth_range"]),
            int(d["texture_octaves"]),
            float(d.get("background_tilt_deg", cls.background_tilt_deg)),
        )


@dataclass(frozen=True, eq=False)
class Layer:
    center: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_extent: tuple[float, float]
    lattices: np.ndarray  # (octaves, LATTICE, LATTICE)
    base_freq: float
    brightness: float

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axis_u, self.axis_v)

    def texture(self, a, b) -> np.ndarray:
        out = np.zeros(np.shape(a))
        total = 0.0
        for o, lat in enumerate(self.lattices):
            amp = 0.5**o
            f = self.base_freq * 2.0**o
            out += amp * _value_noise(lat, np.asarray(a) * f, np.asarray(b) * f)
            total += amp
        return np.clip(0.35 * self.brightness + 0.65 * out / total, 0.0, 1.0)


def _value_noise(lat, x, y) -> np.ndarray:
    n = lat.shape[0]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    fx = fx * fx * (3 - 2 * fx)
    fy = fy * fy * (3 - 2 * fy)
    i0 = x0.astype(np.int64) % n
    j0 = y0.astype(np.int64) % n
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    top = lat[j0, i0] * (1 - fx) + lat[j0, i1] * fx
    bot = lat[j1, i0] * (1 - fx) + lat[j1, i1] * fx
    return top * (1 - fy) + bot * fy


@dataclass(frozen=True, eq=False)
class Scene:
    layers: tuple[Layer, ...]
    seed: int
    config: SceneConfig = field(default_factory=SceneConfig)


def _layer(rng, center, tilt_deg, half_extent, octaves, base_freq, R=None) -> Layer:
    if R is None:
        R = rot_y(rng.uniform(-tilt_deg, tilt_deg)) @ rot_x(rng.uniform(-tilt_deg, tilt_deg))
    return Layer(
        center=np.asarray(center, dtype=float),
        axis_u=R[:, 0].copy(),
        axis_v=R[:, 1].copy(),
        half_extent=half_extent,
        lattices=rng.uniform(0.0, 1.0, size=(octaves, LATTICE, LATTICE)),
        base_freq=base_freq,
        brightness=float(rng.uniform(0.0, 1.0)),
    )


def generate_scene(seed: int, config: SceneConfig | None = None) -> Scene:
    config = config or SceneConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    near, far = config.depth_range
    span = far - near
    z_bg = far - rng.uniform(0.2, 0.4) * span
    # a strongly slanted background spreads keypoint depths, which keeps
    # absolute pose well conditioned when the occluders are out of view
    tilt = config.background_tilt_deg
    yaw = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0) * tilt
    bg_rot = rot_y(yaw) @ rot_x(rng.uniform(-0.5, 0.5) * tilt)
    layers = [_layer(rng, (0.0, 0.0, z_bg), 0.0, (math.inf, math.inf), config.texture_octaves, 1.0, bg_rot)]
    n_occ = config.n_layers - 1
    if n_occ:
        # one depth stratum per occluder keeps their ordering unambiguous
        strata = np.linspace(near, near + 0.5 * span, n_occ + 1)
        for k in rng.permutation(n_occ):
            z = rng.uniform(strata[k], strata[k] + 0.6 * (strata[k + 1] - strata[k]))
            cx = rng.uniform(-0.55, 0.55) * z
            cy = rng.uniform(-0.3, 0.3) * z
            half = (rng.uniform(0.12, 0.28) * z, rng.uniform(0.12, 0.3) * z)
            layers.append(_layer(rng, (cx, cy, z), 8.0, half, config.texture_octaves, 2.0))
    return Scene(tuple(layers), int(seed), config)


@dataclass(frozen=True, eq=False)
class RenderedView:
    image: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    surface: np.ndarray
    camera: CameraModel
    pose: RigidPose  # world -> camera
    scene: Scene | None = None


def cast_rays(scene: Scene, camera: CameraModel, pose: RigidPose, pts):
    """Exact nearest-surface query for pixel coordinates ``pts`` (..., 2).

    Returns ``(depth, surface_id, intensity)``; depth is the camera z of the
    hit (``inf`` and id ``-1`` where no layer is hit).
    """
    pts = np.asarray(pts, dtype=float)
    shape = pts.shape[:-1]
    rays_c = camera.bearings(pts).reshape(-1, 3)
    Rt = pose.rotation.T
    origin = -Rt @ pose.translation
    rays_w = rays_c @ pose.rotation  # R^T d for each row
    best = np.full(len(rays_w), np.inf)
    sid = np.full(len(rays_w), -1)
    tex = np.zeros(len(rays_w))
    for k, layer in enumerate(scene.layers):
        n = layer.normal
        denom = rays_w @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (n @ (layer.center - origin)) / denom
        hit = np.isfinite(s) & (s > 1e-9)
        X = origin + s[:, None] * rays_w
        rel = X - layer.center
        a = rel @ layer.axis_u
        b = rel @ layer.axis_v
        hit &= (np.abs(a) <= layer.half_extent[0]) & (np.abs(b) <= layer.half_extent[1])
        closer = hit & (s < best)
        if np.any(closer):
            best[closer] = s[closer]
            sid[closer] = k
            tex[closer] = layer.texture(a[closer], b[closer])
    return best.reshape(shape), sid.reshape(shape), tex.reshape(shape)


def pixel_centers(camera: CameraModel) -> np.ndarray:
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    return np.stack([xs + 0.5, ys + 0.5], axis=-1).astype(float)


def render_view(scene: Scene, camera: CameraModel, pose: RigidPose) -> RenderedView:
    depth, sid, tex = cast_rays(scene, camera, pose, pixel_centers(camera))
    if np.any(sid < 0):
        raise UncoveredFrustum("background does not cover the camera frustum", missing=int(np.sum(sid < 0)))
    return RenderedView(
        image=tex, depth=depth, valid=np.isfinite(depth), surface=sid,
        camera=camera, pose=pose, scene=scene,
    )


def sample_grid(values, pts) -> np.ndarray:
    """Bilinear lookup of a per-pixel raster at continuous pixel coordinates."""
    values = np.asarray(values, dtype=float)
    h, w = values.shape
    pts = np.asarray(pts, dtype=float)
    u = np.clip(pts[..., 0] - 0.5, 0, w - 1)
    v = np.clip(pts[..., 1] - 0.5, 0, h - 1)
    c0 = np.minimum(np.floor(u), max(w - 2, 0)).astype(int)
    r0 = np.minimum(np.floor(v), max(h - 2, 0)).astype(int)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = u - c0
    fv = v - r0
    return (
        values[r0, c0] * (1 - fu) * (1 - fv)
        + values[r0, c1] * fu * (1 - fv)
        + values[r1, c0] * (1 - fu) * fv
        + values[r1, c1] * fu * fv
    )


def depth_gradient(depth) -> np.ndarray:
    """Per-pixel magnitude of the central-difference depth gradient."""
    d = np.asarray(depth, dtype=float)
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:, 1:-1] = 0.5 * (d[:, 2:] - d[:, :-2])
    gy[1:-1, :] = 0.5 * (d[2:, :] - d[:-2, :])
    gx[:, 0] = d[:, 1] - d[:, 0] if d.shape[1] > 1 else 0.0
    gx[:, -1] = d[:, -1] - d[:, -2] if d.shape[1] > 1 else 0.0
    gy[0, :] = d[1, :] - d[0, :] if d.shape[0] > 1 else 0.0
    gy[-1, :] = d[-1, :] - d[-2, :] if d.shape[0] > 1 else 0.0
    return np.hypot(gx, gy)


def default_depth_grad_max(config: SceneConfig) -> float:
    return 0.05 * config.scale


def sample_keypoints(view: RenderedView, cell: int = 4, depth_grad_max: float = 0.275, jitter: float = 0.0, rng=None):
    """Keypoints at grid-cell centers with their depths, as ``(pts, depths)``.

    ``jitter`` in ``[0, 1)`` moves each keypoint uniformly within that
    fraction of its cell around the center (needs ``rng``).  A jittered grid
    does not alias with the map grid, which matters for sub-cell pose tests.

    A keypoint is dropped when any pixel of the 2x2 block around it has
    invalid depth or a depth gradient above ``depth_grad_max``.  Depth is
    read by exact ray casting when the view still knows its scene.
    """
    if cell < 1:
        raise InvalidConfig("cell must be >= 1", cell=cell)
    cam = view.camera
    ny, nx = cam.height // cell, cam.width // cell
    ys, xs = np.mgrid[0:ny, 0:nx]
    pts = np.stack([xs * cell + cell / 2.0, ys * cell + cell / 2.0], axis=-1).reshape(-1, 2)
    if jitter:
        if not 0 <= jitter < 1:
            raise InvalidConfig("jitter must lie in [0, 1)", jitter=jitter)
        pts = pts + rng.uniform(-0.5, 0.5, size=pts.shape) * jitter * cell
    grad = depth_gradient(np.where(view.valid, view.depth, 0.0))
    bad = ~view.valid | (grad > depth_grad_max)
    keep = np.ones(len(pts), dtype=bool)
    for dx in (-0.5, 0.5):
        for dy in (-0.5, 0.5):
            c = np.clip(np.floor(pts[:, 0] + dx).astype(int), 0, cam.width - 1)
            r = np.clip(np.floor(pts[:, 1] + dy).astype(int), 0, cam.height - 1)
            keep &= ~bad[r, c]
    pts = pts[keep]
    if view.scene is not None:
        depths, _, _ = cast_rays(view.scene, cam, view.pose, pts)
    else:
        depths = sample_grid(view.depth, pts)
    ok = np.isfinite(depths) & (depths > 0)
    return pts[ok], depths[ok]


@dataclass(frozen=True, eq=False)
class LabeledKeypoints:
    """Parallel arrays of source keypoints, depths, correspondents and labels."""

    p_s: np.ndarray
    d_s: np.ndarray
    gt: np.ndarray
    labels: np.ndarray  # object array of label strings

    def __len__(self):
        return len(self.p_s)

    def subset(self, mask) -> "LabeledKeypoints":
        return LabeledKeypoints(self.p_s[mask], self.d_s[mask], self.gt[mask], self.labels[mask])

    def counts(self) -> dict:
        return {lab: int(np.sum(self.labels == lab)) for lab in LABELS}


def relative_pose(source: RenderedView, target: RenderedView) -> RigidPose:
    """``pose_TS``: source-camera coordinates to target-camera coordinates."""
    return pose_compose(target.pose, pose_inverse(source.pose))


def label_keypoints(
    source: RenderedView,
    target: RenderedView,
    p_s,
    d_s,
    depth_tol: float,
    pixel_tol: float = CYCLE_PIXEL_TOL,
) -> LabeledKeypoints:
    """Label keypoints by target bounds and a target->source cyclic projection.

    Keypoints whose 3D point lies behind the target camera have no
    correspondent and are left out of the result.
    """
    p_s = np.asarray(p_s, dtype=float).reshape(-1, 2)
    d_s = np.asarray(d_s, dtype=float).reshape(-1)
    pose_ts = relative_pose(source, target)
    cam_s, cam_t = source.camera, target.camera
    X_t = pose_ts.apply(lift(p_s, d_s, cam_s))
    front = X_t[:, 2] > MIN_TARGET_DEPTH
    p_s, d_s, X_t = p_s[front], d_s[front], X_t[front]
    labels = np.empty(len(p_s), dtype=object)
    if len(p_s) == 0:
        return LabeledKeypoints(p_s, d_s, np.zeros((0, 2)), labels)
    gt = warp(p_s, d_s, pose_ts, cam_s, cam_t)
    inside = cam_t.in_bounds(gt)
    labels[~inside] = OUTPAINTED
    idx = np.flatnonzero(inside)
    if len(idx):
        valid_t = sample_grid(target.valid.astype(float), gt[idx]) > 0.999
        d_t = sample_grid(np.where(target.valid, target.depth, 0.0), gt[idx])
        d_safe = np.where(valid_t & (d_t > 0), d_t, 1.0)
        back = warp(gt[idx], d_safe, pose_inverse(pose_ts), cam_t, cam_s)
        cyc = np.linalg.norm(back - p_s[idx], axis=1)
        occluded = ~valid_t | (cyc > pixel_tol) | (d_t < X_t[idx, 2] - depth_tol)
        labels[idx] = np.where(occluded, INPAINTED, IDENTIFIED)
    return LabeledKeypoints(p_s, d_s, gt, labels)


def visibility_oracle(scene: Scene, source: RenderedView, target: RenderedView, p_s, d_s) -> np.ndarray:
    """Brute-force labels: exact ray cast from the target camera to each point."""
    p_s = np.asarray(p_s, dtype=float).reshape(-1, 2)
    d_s = np.asarray(d_s, dtype=float).reshape(-1)
    pose_ts = relative_pose(source, target)
    X_t = pose_ts.apply(lift(p_s, d_s, source.camera))
    front = X_t[:, 2] > MIN_TARGET_DEPTH
    p_s, d_s, X_t = p_s[front], d_s[front], X_t[front]
    gt = warp(p_s, d_s, pose_ts, source.camera, target.camera)
    out = np.empty(len(p_s), dtype=object)
    inside = target.camera.in_bounds(gt)
    out[~inside] = OUTPAINTED
    z_near, _, _ = cast_rays(scene, target.camera, target.pose, gt[inside])
    visible = z_near >= X_t[inside, 2] * (1 - 1e-9) - 1e-9
    out[inside] = np.where(visible, IDENTIFIED, INPAINTED)
    return out


def default_depth_tol(config: SceneConfig) -> float:
    return 0.01 * config.scale


def estimate_overlap(source: RenderedView, target: RenderedView, cell: int = 4) -> float:
    """Minimum of the two directional covisible-keypoint fractions."""
    config = (source.scene.config if source.scene is not None else SceneConfig())
    tol = default_depth_tol(config)
    grad_max = default_depth_grad_max(config)
    ratios = []
    for a, b in ((source, target), (target, source)):
        p, d = sample_keypoints(a, cell, grad_max)
        if len(p) == 0:
            ratios.append(0.0)
            continue
        lab = label_keypoints(a, b, p, d, tol)
        ratios.append(float(np.sum(lab.labels == IDENTIFIED)) / len(p))
    return min(ratios)


@dataclass(frozen=True)
class PairConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    camera: CameraModel = field(default_factory=default_camera)
    keypoint_cell: int = 4
    keypoint_jitter: float = 0.0
    overlap_range: tuple[float, float] = (0.02, 0.8)
    overlap_bins: int = 6
    max_yaw_deg: float = 45.0
    max_shift: float = 3.5
    max_tries: int = 200

    def to_dict(self) -> dict:
        d = asdict(self)
        d["camera"] = self.camera.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PairConfig":
        d = dict(d)
        d["scene"] = SceneConfig.from_dict(d["scene"])
        d["camera"] = CameraModel.from_dict(d["camera"])
        d["overlap_range"] = tuple(d["overlap_range"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Pair:
    pair_id: str
    seed: int
    scene: Scene
    source: RenderedView
    target: RenderedView
    keypoints: LabeledKeypoints
    overlap: float

    @property
    def pose_ts(self) -> RigidPose:
        return relative_pose(self.source, self.target)

    @property
    def camera(self) -> CameraModel:
        return self.target.camera


def _target_pose(rng, cfg: PairConfig) -> RigidPose:
    yaw = rng.uniform(-cfg.max_yaw_deg, cfg.max_yaw_deg)
    cam_to_world = rot_y(yaw) @ rot_x(rng.uniform(-6, 6)) @ rot_z(rng.uniform(-6, 6))
    center = np.array(
        [rng.uniform(-cfg.max_shift, cfg.max_shift), rng.uniform(-0.4, 0.4), rng.uniform(-1.0, 1.0)]
    )
    R = cam_to_world.T
    return RigidPose(R, -R @ center)


def make_pair(seed: int, cfg: PairConfig | None = None, target_bin: int | None = None, pair_id: str | None = None) -> Pair:
    """Sample a scene and a target pose whose overlap falls in the requested bin.

    Without ``target_bin`` any overlap inside ``overlap_range`` is accepted.
    """
    cfg = cfg or PairConfig()
    rng = np.random.default_rng(seed)
    scene = generate_scene(int(rng.integers(2**31)), cfg.scene)
    source = render_view(scene, cfg.camera, RigidPose.identity())
    lo, hi = cfg.overlap_range
    if target_bin is not None:
        edges = np.linspace(lo, hi, cfg.overlap_bins + 1)
        lo, hi = edges[target_bin], edges[target_bin + 1]
    best = None
    for _ in range(cfg.max_tries):
        pose = _target_pose(rng, cfg)
        try:
            target = render_view(scene, cfg.camera, pose)
        except UncoveredFrustum:
            continue
        overlap = estimate_overlap(source, target, cfg.keypoint_cell)
        gap = 0.0 if lo <= overlap <= hi else min(abs(overlap - lo), abs(overlap - hi))
        if best is None or gap < best[0]:
            best = (gap, target, overlap)
        if gap == 0.0:
            break
    if best is None:
        raise UncoveredFrustum("no valid target pose found", seed=seed)
    _, target, overlap = best
    p, d = sample_keypoints(source, cfg.keypoint_cell, default_depth_grad_max(cfg.scene), cfg.keypoint_jitter, rng)
    kps = label_keypoints(source, target, p, d, default_depth_tol(cfg.scene))
    return Pair(pair_id or f"{seed:08d}", int(seed), scene, source, target, kps, overlap)


def make_pairs(n: int, seed: int, cfg: PairConfig | None = None, prefix: str = "pair") -> list[Pair]:
    """``n`` pairs with overlap bins visited round-robin for a flat histogram."""
    cfg = cfg or PairConfig()
    seeds = np.random.default_rng(seed).integers(0, 2**31, size=n)
    return [
        make_pair(int(s), cfg, target_bin=i % cfg.overlap_bins, pair_id=f"{prefix}{i:05d}")
        for i, s in enumerate(seeds)
    ]


def pair_record(pair: Pair, cfg: PairConfig) -> dict:
    kp = pair.keypoints
    return {
        "id": pair.pair_id,
        "seed": pair.seed,
        "scene_seed": pair.scene.seed,
        "config": cfg.to_dict(),
        "overlap": pair.overlap,
        "source": {"camera": pair.source.camera.to_dict(), "pose": pair.source.pose.to_dict()},
        "target": {"camera": pair.target.camera.to_dict(), "pose": pair.target.pose.to_dict()},
        "pose_ts": pair.pose_ts.to_dict(),
        "keypoints": [
            {"p_s": kp.p_s[i].tolist(), "d_s": float(kp.d_s[i]), "gt": kp.gt[i].tolist(), "label": kp.labels[i]}
            for i in range(len(kp))
        ],
    }


def _grid_frame(camera: CameraModel) -> MapFrame:
    return MapFrame(1, 0, 0, camera.width, camera.height)


def save_pair(pair: Pair, cfg: PairConfig, directory) -> Path:
    d = Path(directory) / pair.pair_id
    d.mkdir(parents=True, exist_ok=True)
    (d / "pair.json").write_text(json.dumps(pair_record(pair, cfg), indent=1))
    frame = _grid_frame(pair.source.camera)
    write_maps(d / "source_image.bin", pair.source.image, frame)
    write_maps(d / "source_depth.bin", pair.source.depth, frame)
    write_maps(d / "target_image.bin", pair.target.image, frame)
    write_maps(d / "target_depth.bin", pair.target.depth, frame)
    return d


def load_pair(directory) -> Pair:
    """Rebuild a pair from disk; the scene is regenerated from its seed."""
    d = Path(directory)
    rec = json.loads((d / "pair.json").read_text())
    cfg = PairConfig.from_dict(rec["config"])
    scene = generate_scene(rec["scene_seed"], cfg.scene)
    views = []
    for name in ("source", "target"):
        img, _ = read_maps(d / f"{name}_image.bin")
        depth, _ = read_maps(d / f"{name}_depth.bin")
        cam = CameraModel.from_dict(rec[name]["camera"])
        pose = RigidPose.from_dict(rec[name]["pose"])
        _, sid, _ = cast_rays(scene, cam, pose, pixel_centers(cam))
        views.append(RenderedView(img[0], depth[0], np.isfinite(depth[0]), sid, cam, pose, scene))
    kps = rec["keypoints"]
    labels = np.empty(len(kps), dtype=object)
    labels[:] = [k["label"] for k in kps]
    lk = LabeledKeypoints(
        np.array([k["p_s"] for k in kps], dtype=float).reshape(-1, 2),
        np.array([k["d_s"] for k in kps], dtype=float),
        np.array([k["gt"] for k in kps], dtype=float).reshape(-1, 2),
        labels,
    )
    return Pair(rec["id"], rec["seed"], scene, views[0], views[1], lk, rec["overlap"])


def write_dataset(pairs: list[Pair], cfg: PairConfig, directory, splits: dict | None = None) -> Path:
    """Write pairs plus a ``manifest.json`` listing ids, overlaps and bins."""
    root = Path(directory)
    (root / "pairs").mkdir(parents=True, exist_ok=True)
    edges = np.linspace(*cfg.overlap_range, cfg.overlap_bins + 1)
    entries = []
    for p in pairs:
        save_pair(p, cfg, root / "pairs")
        b = int(np.clip(np.searchsorted(edges, p.overlap, side="right") - 1, 0, cfg.overlap_bins - 1))
        entries.append(
            {"id": p.pair_id, "overlap": p.overlap, "bin": b, "split": (splits or {}).get(p.pair_id, "train")}
        )
    manifest = {"config": cfg.to_dict(), "bin_edges": edges.tolist(), "pairs": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def read_dataset(directory, split: str | None = None) -> list[Pair]:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    return [
        load_pair(root / "pairs" / e["id"])
        for e in manifest["pairs"]
        if split is None or e["split"] == split
    ]
