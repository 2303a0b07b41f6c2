"""Absolute pose from correspondence maps: P3P + MSAC on the NRE, then GNC.

Poses map source-camera coordinates to target-camera coordinates
(``pose_TS``).  3D points are source keypoints lifted with their depth; the
cost of a pose is read off each keypoint's correspondence map at the
reprojected location.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .corrmap import COST_OUT, argmax_batch, clamped_log, interp_log, uniform_nre
from .errors import DegenerateConfiguration, NonFiniteCost, NonPositiveDepth
from .geometry import EPS_Z, CameraModel, MapFrame, RigidPose, hat, lift, perturb

OK = "ok"
FAILED = "failed"


@dataclass
class PoseEstimate:
    pose: RigidPose
    inlier_count: int
    cost: float
    status: str
    history: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OK

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "status": self.status,
            "inliers": self.inlier_count,
            "cost": self.cost if math.isfinite(self.cost) else None,
        }


def failed_estimate() -> PoseEstimate:
    return PoseEstimate(RigidPose.identity(), 0, math.inf, FAILED)


@dataclass(frozen=True)
class GncSchedule:
    sigma_max: float = 2.0
    sigma_min: float = 0.6
    steps: int = 5
    inner_iters: int = 25
    c: float = 1.0

    def __post_init__(self):
        if not self.sigma_max >= self.sigma_min > 0:
            raise ValueError("need sigma_max >= sigma_min > 0")

    def sigmas(self) -> np.ndarray:
        if self.steps <= 1:
            return np.array([self.sigma_min])
        return np.geomspace(self.sigma_max, self.sigma_min, self.steps)


@dataclass(frozen=True)
class PoseConfig:
    max_iters: int = 5000
    top_fraction: float = 0.2
    threshold: float | None = None  # None: NRE of a uniform map
    schedule: GncSchedule = field(default_factory=GncSchedule)
    seed: int = 0


# ---------------------------------------------------------------- P3P


def _horner(c, x: float) -> float:
    acc = 0.0
    for a in c:
        acc = acc * x + a
    return acc


def _pmul(a, b) -> list:
    out = [0.0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def _poly_roots(coeffs) -> np.ndarray:
    """Real roots of a polynomial (highest degree first), Newton-polished."""
    c = [float(a) for a in coeffs]
    while c and c[0] == 0.0:
        c.pop(0)
    if len(c) < 2:
        return np.zeros(0)
    roots = np.roots(c)
    deg = len(c) - 1
    dc = [a * (deg - i) for i, a in enumerate(c[:-1])]
    out = []
    for z in roots:
        if abs(z.imag) > 1e-6 * max(1.0, abs(z)):
            continue
        r = float(z.real)
        for _ in range(8):
            d = _horner(dc, r)
            if d == 0.0:
                break
            step = _horner(c, r) / d
            r -= step
            if abs(step) <= 1e-15 * max(1.0, abs(r)):
                break
        out.append(r)
    return np.array(out)


def _align(P: np.ndarray, X: np.ndarray) -> RigidPose:
    """Least-squares rigid transform with ``P ~ R X + t`` (Kabsch)."""
    mp, mx = P.mean(axis=0), X.mean(axis=0)
    H = (X - mx).T @ (P - mp)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidPose(R, mp - R @ mx)


def _polish_distances(s, f, d2, cosines, iters: int = 6):
    """Newton iterations on the three law-of-cosines equations."""
    s = [float(v) for v in s]
    pairs = ((1, 2), (0, 2), (0, 1))
    for _ in range(iters):
        F = [s[i] * s[i] + s[j] * s[j] - 2 * s[i] * s[j] * cosines[k] - d2[k] for k, (i, j) in enumerate(pairs)]
        J = [[0.0] * 3 for _ in range(3)]
        for k, (i, j) in enumerate(pairs):
            J[k][i] = 2 * s[i] - 2 * s[j] * cosines[k]
            J[k][j] = 2 * s[j] - 2 * s[i] * cosines[k]
        det = _det3(J)
        if det == 0.0:
            break
        step = []
        for col in range(3):
            Jc = [row[:] for row in J]
            for r in range(3):
                Jc[r][col] = F[r]
            step.append(_det3(Jc) / det)
        s = [s[i] - step[i] for i in range(3)]
        if max(abs(v) for v in step) <= 1e-15 * max(abs(v) for v in s):
            break
    return np.array(s)


def _det3(m) -> float:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def p3p_solve(bearings, points) -> list[RigidPose]:
    """Poses ``(R, t)`` with ``R X_i + t`` along each bearing ``f_i``.

    ``bearings`` are three camera rays (any positive scale), ``points`` the
    three 3D points.  Up to four real solutions are returned.
    """
    f = np.asarray(bearings, dtype=float).reshape(3, 3)
    X = np.asarray(points, dtype=float).reshape(3, 3)
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    sides = [np.linalg.norm(X[1] - X[2]), np.linalg.norm(X[0] - X[2]), np.linalg.norm(X[0] - X[1])]
    area2 = np.linalg.norm(np.cross(X[1] - X[0], X[2] - X[0]))
    if area2 / max(sides) <= 1e-6:
        raise DegenerateConfiguration("3D points are collinear")
    if min(np.linalg.norm(f[i] - f[j]) for i, j in ((0, 1), (0, 2), (1, 2))) <= 1e-9:
        raise DegenerateConfiguration("two bearings coincide")
    a2, b2, c2 = (float(s * s) for s in sides)
    ca, cb, cg = float(f[1] @ f[2]), float(f[0] @ f[2]), float(f[0] @ f[1])
    A, C = a2 / b2, c2 / b2
    # s2 = u s1, s3 = v s1; subtracting the two ratio equations gives u = N(v) / D(v)
    k = C - A
    N = (k + 1.0, -2.0 * cb * k, k - 1.0)  # -(A - C)(v^2 - 2 cb v + 1) + v^2 - 1
    D = (2.0 * ca, -2.0 * cg)
    E = (-C, 2.0 * C * cb, 1.0 - C)  # 1 - C (1 + v^2 - 2 cb v)
    NN, DD, ND = _pmul(N, N), _pmul(D, D), _pmul(N, D)
    EDD = _pmul(E, DD)
    quartic = [NN[i] + EDD[i] - 2.0 * cg * (ND[i - 1] if i else 0.0) for i in range(5)]
    sols = []
    for v in _poly_roots(quartic):
        den = _horner(D, v)
        if abs(den) < 1e-14:
            continue
        u = _horner(N, v) / den
        q = 1 + v * v - 2 * v * cb
        if q <= 0 or u <= 0 or v <= 0:
            continue
        s1 = math.sqrt(b2 / q)
        s = _polish_distances(np.array([s1, u * s1, v * s1]), f, (a2, b2, c2), (ca, cb, cg))
        if np.any(s <= 0):
            continue
        pose = _align(s[:, None] * f, X)
        if any(_same_pose(pose, o) for o in sols):
            continue
        sols.append(pose)
    return sols


def _same_pose(a: RigidPose, b: RigidPose) -> bool:
    return np.allclose(a.rotation, b.rotation, atol=1e-9) and np.allclose(a.translation, b.translation, atol=1e-9)


# ---------------------------------------------------------------- scoring


def _project_to_map(pose: RigidPose, X: np.ndarray, cam: CameraModel, frame: MapFrame):
    P = X @ pose.rotation.T + pose.translation
    z = P[:, 2]
    front = z > EPS_Z
    zs = np.where(front, z, 1.0)
    px = cam.fx * P[:, 0] / zs + cam.cx
    py = cam.fy * P[:, 1] / zs + cam.cy
    x = np.stack([px / frame.stride + frame.pad_x, py / frame.stride + frame.pad_y], axis=-1)
    return x, front, P


def reprojection_nre(log_maps, pose: RigidPose, X, cam: CameraModel, frame: MapFrame) -> np.ndarray:
    """Per-keypoint NRE of a pose; points behind the camera cost ``COST_OUT``."""
    x, front, _ = _project_to_map(pose, X, cam, frame)
    nre = interp_log(log_maps, x[:, 0], x[:, 1])
    return np.where(front, nre, COST_OUT)


SCORE_CHUNK = 256


def _batch_scores(log_maps, poses, X, cam: CameraModel, frame: MapFrame, threshold: float) -> np.ndarray:
    """Truncated MSAC scores of many hypotheses at once."""
    R = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    P = np.einsum("pij,nj->pni", R, X) + t[:, None, :]
    z = P[..., 2]
    front = z > EPS_Z
    zs = np.where(front, z, 1.0)
    mx = (cam.fx * P[..., 0] / zs + cam.cx) / frame.stride + frame.pad_x
    my = (cam.fy * P[..., 1] / zs + cam.cy) / frame.stride + frame.pad_y
    nre = np.where(front, interp_log(log_maps, mx, my), COST_OUT)
    return np.minimum(nre, threshold).sum(axis=1)


def msac_score(log_maps, pose, X, cam, frame, threshold: float) -> float:
    return float(np.minimum(reprojection_nre(log_maps, pose, X, cam, frame), threshold).sum())


def _valid_keypoints(maps, p_s, d_s):
    p_s = np.asarray(p_s, dtype=float).reshape(-1, 2)
    d_s = np.asarray(d_s, dtype=float).reshape(-1)
    maps = np.asarray(maps, dtype=float)
    ok = np.isfinite(d_s) & (d_s > 0) & np.all(np.isfinite(p_s), axis=1)
    return maps[ok], p_s[ok], d_s[ok]


def msac_estimate(maps, p_s, d_s, cam_s: CameraModel, cam_t: CameraModel, frame: MapFrame, config: PoseConfig | None = None) -> PoseEstimate:
    """Best P3P hypothesis under the truncated-NRE MSAC score.

    ``maps`` is an ``(N, H_C, W_C)`` probability stack aligned with the
    source keypoints ``p_s`` and their depths ``d_s``.
    """
    config = config or PoseConfig()
    maps, p_s, d_s = _valid_keypoints(maps, p_s, d_s)
    n = len(p_s)
    if n < 3:
        return failed_estimate()
    if not np.all(np.isfinite(maps)):
        raise NonFiniteCost("correspondence maps contain non-finite values")
    thr = uniform_nre(frame) if config.threshold is None else config.threshold
    log_maps = clamped_log(maps)
    X = lift(p_s, d_s, cam_s)
    pix, peak = argmax_batch(maps, frame)
    rays = cam_t.bearings(pix)
    k = max(3, int(math.ceil(config.top_fraction * n)))
    order = np.argsort(-peak, kind="stable")[:k]
    rng = np.random.default_rng(config.seed)
    triples = list(itertools.combinations(range(k), 3))
    if len(triples) <= config.max_iters:
        sample = triples
    else:
        sample = (tuple(rng.choice(k, 3, replace=False)) for _ in range(config.max_iters))
    best_pose, best_score = None, math.inf
    chunk: list[RigidPose] = []

    def flush():
        nonlocal best_pose, best_score
        if not chunk:
            return
        scores = _batch_scores(log_maps, chunk, X, cam_t, frame, thr)
        j = int(np.argmin(scores))  # first minimum, same as a sequential strict "<"
        if scores[j] < best_score:
            best_pose, best_score = chunk[j], float(scores[j])
        chunk.clear()

    for tri in sample:
        idx = order[list(tri)]
        try:
            chunk.extend(p3p_solve(rays[idx], X[idx]))
        except DegenerateConfiguration:
            continue
        if len(chunk) >= SCORE_CHUNK:
            flush()
    flush()
    if best_pose is None or best_score >= n * thr:
        return failed_estimate()
    inliers = int(np.sum(reprojection_nre(log_maps, best_pose, X, cam_t, frame) < thr))
    return PoseEstimate(best_pose, inliers, best_score, OK)


# ---------------------------------------------------------------- GNC


def robust_cost(excess, sigma: float, c: float = 1.0):
    """Truncated kernel ``min(e, c * sigma)`` applied to excess NRE values."""
    return np.minimum(excess, c * sigma)


class RefinementObjective:
    """Summed truncated excess-NRE of a pose and its gradient in a 6-dim increment.

    The excess of a keypoint is its NRE minus the smallest NRE its map can
    reach, so a perfectly placed keypoint costs zero whatever its peak height.
    """

    def __init__(self, maps, p_s, d_s, cam_s: CameraModel, cam_t: CameraModel, frame: MapFrame):
        maps, p_s, d_s = _valid_keypoints(maps, p_s, d_s)
        if not np.all(np.isfinite(maps)):
            raise NonFiniteCost("correspondence maps contain non-finite values")
        self.log_maps = clamped_log(maps)
        self.floor = -self.log_maps.reshape(len(maps), -1).max(axis=1)
        self.X = lift(p_s, d_s, cam_s)
        self.cam = cam_t
        self.frame = frame

    def __len__(self):
        return len(self.X)

    def excess(self, pose: RigidPose) -> np.ndarray:
        return reprojection_nre(self.log_maps, pose, self.X, self.cam, self.frame) - self.floor

    def cost(self, pose: RigidPose, sigma: float, c: float = 1.0) -> float:
        val = float(robust_cost(self.excess(pose), sigma, c).sum())
        if not math.isfinite(val):
            raise NonFiniteCost("refinement cost is not finite")
        return val

    def jacobians(self, pose: RigidPose):
        """Map-coordinate Jacobians ``(N, 2, 6)`` of a left increment at zero."""
        x, front, P = _project_to_map(pose, self.X, self.cam, self.frame)
        z = np.where(front, P[:, 2], 1.0)
        fx = self.cam.fx / self.frame.stride
        fy = self.cam.fy / self.frame.stride
        dproj = np.zeros((len(P), 2, 3))
        dproj[:, 0, 0] = fx / z
        dproj[:, 0, 2] = -fx * P[:, 0] / z**2
        dproj[:, 1, 1] = fy / z
        dproj[:, 1, 2] = -fy * P[:, 1] / z**2
        dP = np.zeros((len(P), 3, 6))
        dP[:, :, :3] = -np.stack([hat(p) for p in P]) if len(P) else 0.0
        dP[:, :, 3:] = np.eye(3)
        J = dproj @ dP
        J[~front] = 0.0
        return x, front, J

    def gradient(self, pose: RigidPose, sigma: float, c: float = 1.0) -> np.ndarray:
        x, front, J = self.jacobians(pose)
        nre, g = interp_log(self.log_maps, x[:, 0], x[:, 1], with_grad=True)
        excess = np.where(front, nre, COST_OUT) - self.floor
        active = front & (excess < c * sigma)
        return np.einsum("ni,nij->j", g[active], J[active])


def gnc_refine(initial: RigidPose, maps, p_s, d_s, cam_s: CameraModel, cam_t: CameraModel, frame: MapFrame, schedule: GncSchedule | None = None) -> PoseEstimate:
    """Anneal the truncation from ``sigma_max`` to ``sigma_min`` and descend.

    Each inner step is a Gauss-Newton-preconditioned gradient step on the
    6-dim increment with Armijo backtracking, so accepted costs never rise.
    """
    schedule = schedule or GncSchedule()
    obj = RefinementObjective(maps, p_s, d_s, cam_s, cam_t, frame)
    if len(obj) < 3:
        return failed_estimate()
    pose = initial
    history = []
    c = schedule.c
    for sigma in schedule.sigmas():
        cost = obj.cost(pose, sigma, c)
        history.append(cost)
        for _ in range(schedule.inner_iters):
            g = obj.gradient(pose, sigma, c)
            if not np.any(g):
                break
            _, front, J = obj.jacobians(pose)
            M = np.einsum("nij,nik->jk", J[front], J[front])
            M += 1e-9 * max(np.trace(M), 1.0) * np.eye(6)
            d = -np.linalg.solve(M, g)
            slope = float(g @ d)
            if slope >= 0:
                d, slope = -g, -float(g @ g)
            alpha, accepted = 1.0, False
            for _ in range(30):
                cand = perturb(pose, alpha * d)
                new = obj.cost(cand, sigma, c)
                if new <= cost + 1e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            pose, cost = cand, new
            history.append(cost)
    sigma_min = schedule.sigmas()[-1]
    inliers = int(np.sum(obj.excess(pose) < c * sigma_min))
    return PoseEstimate(pose, inliers, cost, OK, history)


def estimate(maps, p_s, d_s, cam_s: CameraModel, cam_t: CameraModel, frame: MapFrame, config: PoseConfig | None = None) -> PoseEstimate:
    """MSAC initialization followed by GNC refinement."""
    config = config or PoseConfig()
    try:
        init = msac_estimate(maps, p_s, d_s, cam_s, cam_t, frame, config)
    except NonPositiveDepth:
        return failed_estimate()
    if not init.ok:
        return init
    return gnc_refine(init.pose, maps, p_s, d_s, cam_s, cam_t, frame, config.schedule)
