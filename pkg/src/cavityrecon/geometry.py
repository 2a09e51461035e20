"""Camera model, rigid poses and similarity transforms.

Conventions
-----------
* Poses are camera-to-world: ``x_world = R @ x_cam + t``.
* Quaternions are stored scalar-last ``(qx, qy, qz, qw)`` and renormalized
  after every composition.
* Pixel coordinates are continuous, integer values at pixel centers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidPose, NonPositiveDepth, NonPositiveScale

_QUAT_TOL = 1e-9


def _normalized_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidPose(f"invalid quaternion {q}")
    q = q / n
    # canonical hemisphere keeps equality comparisons meaningful
    if q[3] < 0:
        q = -q
    return q


def quat_to_matrix(q) -> np.ndarray:
    return Rotation.from_quat(q).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    return _normalized_quat(Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat())


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z for every pixel, shape (H, W, 3)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = (u - self.cx) / self.fx
        rays[..., 1] = (v - self.cy) / self.fy
        rays[..., 2] = 1.0
        return rays


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray  # (qx, qy, qz, qw)
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidPose("non-finite translation")
        object.__setattr__(self, "rotation", _normalized_quat(self.rotation))
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t) -> RigidPose:
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """World direction of the camera +z axis."""
        return self.R[:, 2]

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> RigidPose:
        Rt = self.R.T
        return RigidPose.from_matrix(Rt, -Rt @ self.translation)

    def compose(self, other: RigidPose) -> RigidPose:
        """``self ∘ other``: apply ``other`` first."""
        R = self.R @ other.R
        return RigidPose.from_matrix(R, self.R @ other.translation + self.translation)

    def camera_to_world(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.translation

    def world_to_camera(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.R

    def allclose(self, other: RigidPose, atol=1e-9) -> bool:
        return np.allclose(self.matrix(), other.matrix(), atol=atol)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * R @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        s = float(self.scale)
        if not s > 0 or not np.isfinite(s):
            raise NonPositiveScale(f"scale must be positive, got {s}")
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidPose("non-finite translation")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", _normalized_quat(self.rotation))
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls(1.0, np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, scale, R, t) -> SimilarityTransform:
        return cls(scale, matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self.R
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.R.T) + self.translation

    def inverse(self) -> SimilarityTransform:
        Rt = self.R.T
        s = 1.0 / self.scale
        return SimilarityTransform.from_matrix(s, Rt, -s * (Rt @ self.translation))

    def compose(self, other: SimilarityTransform) -> SimilarityTransform:
        """``self ∘ other``: apply ``other`` first."""
        R = self.R @ other.R
        t = self.scale * (self.R @ other.translation) + self.translation
        return SimilarityTransform.from_matrix(self.scale * other.scale, R, t)

    def apply_to_pose(self, pose: RigidPose) -> RigidPose:
        """Map a camera pose into the target frame; the camera keeps its intrinsics."""
        return RigidPose.from_matrix(self.R @ pose.R, self.apply(pose.translation))


def project(point, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame point(s) to continuous pixels."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point at or behind the camera plane")
    return np.stack([k.fx * p[..., 0] / z + k.cx, k.fy * p[..., 1] / z + k.cy], axis=-1)


def unproject(pixel, depth, k: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - k.cx) / k.fx * d
    y = (px[..., 1] - k.cy) / k.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def transform_point(t: SimilarityTransform, p) -> np.ndarray:
    return t.apply(p)


def rotation_angle_deg(Ra, Rb) -> float:
    """Geodesic angle between two rotation matrices in degrees."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def look_rotation(forward, up_hint) -> np.ndarray:
    """Camera-to-world rotation whose +z is ``forward`` and +y is close to ``-up_hint``.

    Image y grows downward, so the world "up" maps to camera -y.
    """
    z = np.asarray(forward, dtype=np.float64)
    z = z / np.linalg.norm(z)
    x = np.cross(-np.asarray(up_hint, dtype=np.float64), z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise InvalidPose("up hint parallel to forward direction")
    x /= nx
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
