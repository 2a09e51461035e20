"""Uncertainty-aware projective TSDF fusion.

Each voxel center is projected into the frame and compared against the
nearest pixel's depth.  The truncation band for that pixel scales with its
depth uncertainty, ``tau = clamp(k * sigma, tau_min, tau_max)``, so uncertain
measurements spread a shallower ramp.  Samples are folded into a running
weighted mean.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .depth import DepthFrame, SparsePointCloud, rescale_frames
from .errors import EmptyVolume, InvalidPose, NoValidDepths

WEIGHT_MODES = ("inverse_sigma", "uniform")


@dataclass(frozen=True)
class FusionConfig:
    voxel_size: float = 1.0
    sigma_multiplier: float = 3.0
    tau_min: Optional[float] = None  # default 2 voxels
    tau_max: Optional[float] = None  # default 10 voxels
    weight_cap: float = 100.0
    sigma_floor: float = 1e-3
    weight_mode: str = "inverse_sigma"
    bounds_min: Optional[tuple] = None  # explicit volume bounds override auto-fit
    bounds_max: Optional[tuple] = None

    def __post_init__(self):
        if self.tau_min is None:
            object.__setattr__(self, "tau_min", 2.0 * self.voxel_size)
        if self.tau_max is None:
            object.__setattr__(self, "tau_max", 10.0 * self.voxel_size)
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")
        if not (self.sigma_multiplier > 0 and self.weight_cap > 0 and self.sigma_floor > 0):
            raise ValueError("sigma_multiplier, weight_cap and sigma_floor must be positive")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")


@dataclass(eq=False)
class TsdfVolume:
    """Voxel grid indexed ``[ix, iy, iz]``; ``origin`` is the center of voxel (0, 0, 0)."""

    origin: np.ndarray
    voxel_size: float
    tsdf: np.ndarray
    weight: np.ndarray
    color: np.ndarray  # float RGB running mean

    @classmethod
    def allocate(cls, origin, voxel_size, dims) -> TsdfVolume:
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise EmptyVolume(f"invalid volume dims {dims}")
        return cls(
            np.asarray(origin, dtype=np.float64),
            float(voxel_size),
            np.ones(dims, dtype=np.float64),
            np.zeros(dims, dtype=np.float64),
            np.zeros(dims + (3,), dtype=np.float64),
        )

    @property
    def dims(self) -> tuple:
        return self.tsdf.shape

    def copy(self) -> TsdfVolume:
        return TsdfVolume(self.origin.copy(), self.voxel_size, self.tsdf.copy(), self.weight.copy(), self.color.copy())

    def voxel_centers(self) -> np.ndarray:
        idx = np.indices(self.dims, dtype=np.float64)
        return self.origin + self.voxel_size * np.moveaxis(idx, 0, -1)

    def observed_fraction(self) -> float:
        return float(np.count_nonzero(self.weight > 0) / self.weight.size)


def truncation_for_sigma(sigma, cfg: FusionConfig):
    return np.clip(cfg.sigma_multiplier * np.asarray(sigma, dtype=np.float64), cfg.tau_min, cfg.tau_max)


def _integrate_inplace(vol: TsdfVolume, frame: DepthFrame, cfg: FusionConfig) -> None:
    pose = frame.pose
    if not (np.all(np.isfinite(pose.translation)) and np.all(np.isfinite(pose.rotation))):
        raise InvalidPose(f"frame {frame.frame_id}: non-finite pose")
    if vol.tsdf.size == 0:
        raise EmptyVolume("volume has no voxels")
    k = frame.intrinsics
    cam = pose.world_to_camera(vol.voxel_centers().reshape(-1, 3))
    z = cam[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = np.floor(k.fx * cam[:, 0] / zs + k.cx + 0.5)
    v = np.floor(k.fy * cam[:, 1] / zs + k.cy + 0.5)
    inside = front & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    idx = np.flatnonzero(inside)
    ui = u[idx].astype(np.int64)
    vi = v[idx].astype(np.int64)
    depth = frame.mean[vi, ui]
    ok = depth > 0
    idx, ui, vi, depth = idx[ok], ui[ok], vi[ok], depth[ok]

    sigma = frame.stddev[vi, ui]
    sdf = depth - z[idx]
    tau = truncation_for_sigma(sigma, cfg)
    keep = np.abs(sdf) <= tau  # behind the band is occluded, in front of it is left unobserved
    idx, ui, vi, sdf, tau, sigma = idx[keep], ui[keep], vi[keep], sdf[keep], tau[keep], sigma[keep]

    sample = np.clip(sdf / tau, -1.0, 1.0)
    if cfg.weight_mode == "inverse_sigma":
        w = 1.0 / np.maximum(sigma, cfg.sigma_floor)
    else:
        w = np.ones_like(sample)

    tsdf = vol.tsdf.reshape(-1)
    weight = vol.weight.reshape(-1)
    color = vol.color.reshape(-1, 3)
    W = weight[idx]
    total = W + w
    tsdf[idx] = (W * tsdf[idx] + w * sample) / total
    color[idx] = (W[:, None] * color[idx] + w[:, None] * frame.color[vi, ui]) / total[:, None]
    weight[idx] = np.minimum(total, cfg.weight_cap)


def integrate_frame(vol: TsdfVolume, frame: DepthFrame, cfg: FusionConfig) -> TsdfVolume:
    """Return a new volume with ``frame`` folded in; ``vol`` is left untouched."""
    out = vol.copy()
    _integrate_inplace(out, frame, cfg)
    return out


def fit_volume(frames: Sequence[DepthFrame], cfg: FusionConfig) -> TsdfVolume:
    """Allocate a volume covering all valid back-projected depths plus tau_max."""
    if cfg.bounds_min is not None and cfg.bounds_max is not None:
        lo = np.asarray(cfg.bounds_min, dtype=np.float64)
        hi = np.asarray(cfg.bounds_max, dtype=np.float64)
    else:
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for f in frames:
            if not f.valid.any():
                continue
            pts = f.backproject()
            lo = np.minimum(lo, pts.min(axis=0))
            hi = np.maximum(hi, pts.max(axis=0))
        if not np.all(np.isfinite(lo)):
            raise NoValidDepths("no valid depth pixel in any frame")
        lo = lo - cfg.tau_max
        hi = hi + cfg.tau_max
    dims = np.floor((hi - lo) / cfg.voxel_size).astype(np.int64) + 1
    return TsdfVolume.allocate(lo, cfg.voxel_size, dims)


def integrate_sequence(frames: Sequence[DepthFrame], cfg: FusionConfig, vol: Optional[TsdfVolume] = None) -> TsdfVolume:
    """Fuse already scale-consistent frames in the given order."""
    if len(frames) == 0:
        raise NoValidDepths("empty frame list")
    if vol is None:
        vol = fit_volume(frames, cfg)
    else:
        vol = vol.copy()
    for f in frames:
        _integrate_inplace(vol, f, cfg)
    return vol


def fuse_sequence(
    frames: Sequence[DepthFrame],
    cloud: Optional[SparsePointCloud],
    cfg: FusionConfig,
    scale_mode: str = "per_frame",
) -> TsdfVolume:
    """Rescale each frame against the sparse landmarks, then fuse in order.

    Pass ``cloud=None`` for frames that are already metric.
    """
    if len(frames) == 0:
        raise NoValidDepths("empty frame list")
    if not any(f.valid.any() for f in frames):
        raise NoValidDepths("no valid depth pixel in any frame")
    if cloud is not None:
        frames, _ = rescale_frames(frames, cloud, scale_mode)
    return integrate_sequence(frames, cfg)


def with_bounds(cfg: FusionConfig, lo, hi) -> FusionConfig:
    return replace(cfg, bounds_min=tuple(map(float, lo)), bounds_max=tuple(map(float, hi)))
