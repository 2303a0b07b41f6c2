"""Pinhole camera math: projection, keypoint warping, map frames, pose algebra.

Pixel coordinates are continuous: pixel ``(row, col)`` covers
``[col, col + 1) x [row, row + 1)`` and its center sits at
``(col + 0.5, row + 0.5)``.  Angles are degrees at the API boundary and
radians everywhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NonPositiveDepth

EPS_Z = 1e-6


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfig("focal lengths must be positive", fx=self.fx, fy=self.fy)
        if self.width < 1 or self.height < 1:
            raise InvalidConfig("image size must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidConfig("principal point outside the image", cx=self.cx, cy=self.cy)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def in_bounds(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)

    def bearings(self, pts) -> np.ndarray:
        """Back-project pixels to rays with unit z component."""
        pts = np.asarray(pts, dtype=float)
        x = (pts[..., 0] - self.cx) / self.fx
        y = (pts[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Rigid transform ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        ortho = np.max(np.abs(R.T @ R - np.eye(3)))
        return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) <= tol)

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidPose":
        return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))

    def __repr__(self) -> str:
        return f"RigidPose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class MapFrame:
    """Affine frame between target-image pixels and correspondence-map cells.

    ``x_map = x_img / stride + pad_x``; ``map_w = ceil(width / stride) + 2 * pad_x``.
    """

    stride: int
    pad_x: int
    pad_y: int
    map_w: int
    map_h: int

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidConfig("stride must be a positive integer", stride=self.stride)
        if self.pad_x < 0 or self.pad_y < 0:
            raise InvalidConfig("padding must be nonnegative")
        if self.map_w < 1 or self.map_h < 1:
            raise InvalidConfig("map must have at least one cell")

    @classmethod
    def for_image(cls, width: int, height: int, stride: int, gamma: float = 0.0) -> "MapFrame":
        if gamma < 0:
            raise InvalidConfig("gamma must be nonnegative", gamma=gamma)
        base_w = math.ceil(width / stride)
        base_h = math.ceil(height / stride)
        pad_x = int(round(gamma * base_w))
        pad_y = int(round(gamma * base_h))
        return cls(stride, pad_x, pad_y, base_w + 2 * pad_x, base_h + 2 * pad_y)

    @property
    def n_cells(self) -> int:
        return self.map_w * self.map_h

    @property
    def K_C(self) -> np.ndarray:
        s = self.stride
        return np.array([[1.0 / s, 0.0, self.pad_x], [0.0, 1.0 / s, self.pad_y], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "stride": self.stride,
            "pad_x": self.pad_x,
            "pad_y": self.pad_y,
            "map_w": self.map_w,
            "map_h": self.map_h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapFrame":
        return cls(int(d["stride"]), int(d["pad_x"]), int(d["pad_y"]), int(d["map_w"]), int(d["map_h"]))


def project(u) -> np.ndarray:
    """Perspective division ``(x/z, y/z)``; works on ``(..., 3)`` arrays."""
    u = np.asarray(u, dtype=float)
    z = u[..., 2]
    if np.any(z <= EPS_Z):
        raise NonPositiveDepth("point on or behind the camera plane", z=float(np.min(z)))
    return u[..., :2] / z[..., None]


def warp(p_s, d_s, pose_ts: RigidPose, cam_s: CameraModel, cam_t: CameraModel) -> np.ndarray:
    """Correspondent of source pixel(s) ``p_s`` at depth ``d_s`` in the target plane.

    The result is not clipped to the target image.
    """
    p_s = np.asarray(p_s, dtype=float)
    d_s = np.asarray(d_s, dtype=float)
    if np.any(d_s <= 0):
        raise NonPositiveDepth("source depth must be positive")
    X = cam_s.bearings(p_s) * d_s[..., None]
    uv = project(pose_ts.apply(X))
    return np.stack([cam_t.fx * uv[..., 0] + cam_t.cx, cam_t.fy * uv[..., 1] + cam_t.cy], axis=-1)


def lift(p_s, d_s, cam: CameraModel) -> np.ndarray:
    """3D points in the camera frame for pixels with known z-depth."""
    return cam.bearings(p_s) * np.asarray(d_s, dtype=float)[..., None]


def image_to_map(p, frame: MapFrame) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    pad = np.array([frame.pad_x, frame.pad_y], dtype=float)
    return p / frame.stride + pad


def map_to_image(x, frame: MapFrame) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    pad = np.array([frame.pad_x, frame.pad_y], dtype=float)
    return (x - pad) * frame.stride


def pose_compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """``a o b``: apply ``b`` first, then ``a``."""
    return RigidPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def pose_inverse(a: RigidPose) -> RigidPose:
    Rt = a.rotation.T
    return RigidPose(Rt, -Rt @ a.translation)


def pose_error(est: RigidPose, gt: RigidPose) -> tuple[float, float]:
    """(rotation error in degrees, translation error in scene units).

    The angle equals ``arccos((tr(R_est R_gt^T) - 1) / 2)``; it is evaluated
    as ``atan2(sin, cos)`` so that tiny angles keep full precision.
    """
    E = est.rotation @ gt.rotation.T
    c = min(1.0, max(-1.0, (np.trace(E) - 1.0) / 2.0))
    s = 0.5 * math.hypot(E[2, 1] - E[1, 2], E[0, 2] - E[2, 0], E[1, 0] - E[0, 1])
    rot = math.degrees(math.atan2(s, c))
    return rot, float(np.linalg.norm(est.translation - gt.translation))


def hat(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula for an axis-angle vector (radians)."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + math.sin(theta) / theta * W + (1 - math.cos(theta)) / theta**2 * W @ W


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    c = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(c)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if math.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / axis[k]
        axis /= np.linalg.norm(axis)
        return axis * theta
    return theta / (2 * math.sin(theta)) * v


def rotation_about(axis, degrees: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return so3_exp(axis / np.linalg.norm(axis) * math.radians(degrees))


def rot_x(degrees: float) -> np.ndarray:
    return rotation_about([1, 0, 0], degrees)


def rot_y(degrees: float) -> np.ndarray:
    return rotation_about([0, 1, 0], degrees)


def rot_z(degrees: float) -> np.ndarray:
    return rotation_about([0, 0, 1], degrees)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def perturb(pose: RigidPose, increment) -> RigidPose:
    """Left-multiply by the rigid motion of a 6-vector (axis-angle, translation)."""
    increment = np.asarray(increment, dtype=float)
    dR = so3_exp(increment[:3])
    return RigidPose(dR @ pose.rotation, dR @ pose.translation + increment[3:])
