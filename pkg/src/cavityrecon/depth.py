"""Per-pixel Gaussian depth frames, their likelihood against sparse landmarks,
and scale recovery."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonPositiveScale, NoVisiblePoints
from .geometry import CameraIntrinsics, RigidPose


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Depth mean/stddev maps (H, W); ``mean == 0`` marks an invalid pixel."""

    mean: np.ndarray
    stddev: np.ndarray
    color: np.ndarray
    pose: RigidPose
    intrinsics: CameraIntrinsics
    frame_id: int = 0

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.stddev, dtype=np.float64)
        if mean.shape != shape or std.shape != shape:
            raise ValueError(f"depth maps must have shape {shape}")
        color = np.asarray(self.color)
        if color.shape != shape + (3,):
            raise ValueError("color must be (H, W, 3)")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", std)
        object.__setattr__(self, "color", color.astype(np.uint8, copy=False))

    @property
    def valid(self) -> np.ndarray:
        return self.mean > 0

    def backproject(self) -> np.ndarray:
        """World coordinates of all valid pixels, shape (N, 3)."""
        rays = self.intrinsics.pixel_rays()[self.valid]
        cam = rays * self.mean[self.valid][:, None]
        return self.pose.camera_to_world(cam)


@dataclass(frozen=True, eq=False)
class SparsePointCloud:
    points: np.ndarray
    visibility: list = field(default_factory=list)  # one frozenset of frame ids per point

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        vis = [frozenset(int(f) for f in v) for v in self.visibility]
        if len(vis) != len(pts):
            raise ValueError("need one visibility set per point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visibility", vis)

    def __len__(self):
        return len(self.points)

    def visible_in(self, frame_id: int) -> np.ndarray:
        return np.array([frame_id in v for v in self.visibility], dtype=bool)


def _landmark_samples(frame: DepthFrame, cloud: SparsePointCloud):
    """Landmark camera depths z and (mu, sigma) at their nearest pixels."""
    mask = cloud.visible_in(frame.frame_id)
    pts = frame.pose.world_to_camera(cloud.points[mask])
    pts = pts[pts[:, 2] > 0]
    k = frame.intrinsics
    u = np.floor(k.fx * pts[:, 0] / pts[:, 2] + k.cx + 0.5).astype(np.int64)
    v = np.floor(k.fy * pts[:, 1] / pts[:, 2] + k.cy + 0.5).astype(np.int64)
    inside = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    z, u, v = pts[inside, 2], u[inside], v[inside]
    mu = frame.mean[v, u]
    sigma = frame.stddev[v, u]
    ok = mu > 0
    return z[ok], mu[ok], sigma[ok]


def nll_score(frame: DepthFrame, cloud: SparsePointCloud) -> float:
    """Negative log-likelihood of the visible landmarks, constants dropped."""
    z, mu, sigma = _landmark_samples(frame, cloud)
    if len(z) == 0:
        raise NoVisiblePoints(f"no landmark visible in frame {frame.frame_id}")
    return float(np.sum((z - mu) ** 2 / (2.0 * sigma**2) + np.log(sigma)))


def scale_ratios(frame: DepthFrame, cloud: SparsePointCloud) -> np.ndarray:
    z, mu, _ = _landmark_samples(frame, cloud)
    return z / mu


def recover_scale(frame: DepthFrame, cloud: SparsePointCloud) -> float:
    """Median landmark-to-prediction depth ratio for one frame."""
    r = scale_ratios(frame, cloud)
    if len(r) == 0:
        raise NoVisiblePoints(f"no landmark with valid depth in frame {frame.frame_id}")
    return float(np.median(r))


def recover_scale_global(frames, cloud: SparsePointCloud) -> float:
    """One median ratio pooled over every frame of a sequence."""
    r = np.concatenate([scale_ratios(f, cloud) for f in frames])
    if len(r) == 0:
        raise NoVisiblePoints("no landmark with valid depth in any frame")
    return float(np.median(r))


def apply_scale(frame: DepthFrame, s: float) -> DepthFrame:
    if not s > 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return replace(frame, mean=frame.mean * s, stddev=frame.stddev * s)


def rescale_frames(frames, cloud: SparsePointCloud, mode: str = "per_frame"):
    """Bring every frame to the landmark scale; returns (frames, scales)."""
    if mode == "per_frame":
        scales = [recover_scale(f, cloud) for f in frames]
    elif mode == "global":
        s = recover_scale_global(frames, cloud)
        scales = [s] * len(frames)
    elif mode == "none":
        scales = [1.0] * len(frames)
    else:
        raise ValueError(f"unknown scale mode {mode!r}")
    return [apply_scale(f, s) for f, s in zip(frames, scales)], scales
