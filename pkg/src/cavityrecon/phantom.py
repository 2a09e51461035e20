"""Synthetic cavity phantom: a bent, radius-varying closed tube, a camera
path through it, a ray-cast depth renderer and an SfM-like sparse sampler.

World units are millimetres.  Phantom triangles face the lumen, i.e. the
free-space side the camera looks from, which matches the orientation of
meshes extracted from the fused volume.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bvh import BVH
from .depth import DepthFrame, SparsePointCloud
from .errors import DegenerateMesh, InvalidSpec, NoVisibleSurface
from .geometry import CameraIntrinsics, RigidPose, look_rotation
from .mesh import TriangleMesh

DEFAULT_INTRINSICS = CameraIntrinsics(fx=120.0, fy=120.0, cx=159.5, cy=127.5, width=320, height=256)


@dataclass(frozen=True)
class PhantomSpec:
    length: float = 120.0
    radius_profile: tuple = (12.0, 16.0, 20.0, 15.0, 9.0, 13.0)
    bend: float = 20.0  # lateral (x) offset of the centerline at the far end
    bump_amplitude: float = 0.06  # relative to the local radius
    bump_angular_freq: int = 5
    bump_axial_freq: float = 3.0
    axial_segments: int = 160
    angular_segments: int = 96
    seed: int = 0

    def validate(self):
        if self.length <= 0:
            raise InvalidSpec("length must be positive")
        if len(self.radius_profile) < 1 or min(self.radius_profile) <= 0:
            raise InvalidSpec("radius profile must be positive")
        if not 0 <= self.bump_amplitude < 1:
            raise InvalidSpec("bump amplitude must be in [0, 1)")
        if self.axial_segments < 16 or self.angular_segments < 16:
            raise InvalidSpec("tessellation must be at least 16 x 16")

    def phases(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7B]))
        return rng.uniform(0, 2 * np.pi, size=2)

    def base_radius(self, s):
        ctrl = np.asarray(self.radius_profile, dtype=np.float64)
        if len(ctrl) == 1:
            return np.full_like(np.asarray(s, dtype=np.float64), ctrl[0])
        return np.interp(s, np.linspace(0.0, self.length, len(ctrl)), ctrl)

    def radius(self, s, theta):
        p1, p2 = self.phases()
        bump = np.sin(self.bump_angular_freq * theta + p1) * np.sin(
            2 * np.pi * self.bump_axial_freq * np.asarray(s) / self.length + p2
        )
        return self.base_radius(s) * (1.0 + self.bump_amplitude * bump)

    def centerline(self, s):
        s = np.asarray(s, dtype=np.float64)
        x = self.bend * (s / self.length) ** 2
        return np.stack([x, np.zeros_like(s), s], axis=-1)

    def frame(self, s):
        """Unit tangent and the two ring axes at axial position(s) ``s``."""
        s = np.asarray(s, dtype=np.float64)
        dx = 2.0 * self.bend * s / self.length**2
        t = np.stack([dx, np.zeros_like(s), np.ones_like(s)], axis=-1)
        t /= np.linalg.norm(t, axis=-1, keepdims=True)
        e1 = np.stack([t[..., 2], np.zeros_like(s), -t[..., 0]], axis=-1)
        e2 = np.broadcast_to(np.array([0.0, 1.0, 0.0]), t.shape).copy()
        return t, e1, e2


def generate_phantom(spec: PhantomSpec) -> TriangleMesh:
    spec.validate()
    na, nt = spec.axial_segments, spec.angular_segments
    s = np.linspace(0.0, spec.length, na + 1)
    theta = 2 * np.pi * np.arange(nt) / nt
    S, TH = np.meshgrid(s, theta, indexing="ij")
    r = spec.radius(S, TH)
    if r.min() <= 0:
        raise InvalidSpec("radius not positive after perturbation")
    c = spec.centerline(s)
    _, e1, e2 = spec.frame(s)
    ring = (
        c[:, None, :]
        + (r * np.cos(TH))[..., None] * e1[:, None, :]
        + (r * np.sin(TH))[..., None] * e2[:, None, :]
    )
    verts = np.concatenate([ring.reshape(-1, 3), c[[0, -1]]])
    start_c, end_c = len(verts) - 2, len(verts) - 1

    i, j = np.meshgrid(np.arange(na), np.arange(nt), indexing="ij")
    a = i * nt + j
    b = (i + 1) * nt + j
    cc = i * nt + (j + 1) % nt
    d = (i + 1) * nt + (j + 1) % nt
    wall = np.concatenate([np.stack([a, b, cc], -1).reshape(-1, 3), np.stack([b, d, cc], -1).reshape(-1, 3)])
    jj = np.arange(nt)
    cap0 = np.stack([np.full(nt, start_c), jj, (jj + 1) % nt], -1)
    last = na * nt
    cap1 = np.stack([np.full(nt, end_c), last + (jj + 1) % nt, last + jj], -1)
    return TriangleMesh(verts, np.concatenate([wall, cap0, cap1]))


def generate_trajectory(
    spec: PhantomSpec,
    n_frames: int,
    margin: float = 0.1,
    lateral_offset: float = 0.15,
    look_angle_deg: float = 12.0,
) -> list:
    """Camera path in along the tube and back out again.

    The first half looks down the tube, the second half looks back toward
    the entrance, so both end caps are observed.  Lateral offsets (relative
    to the local radius) and look-around angles vanish at both ends of each
    pass.
    """
    spec.validate()
    if n_frames < 2:
        raise InvalidSpec("need at least 2 frames")
    n_fwd = (n_frames + 1) // 2
    n_back = n_frames - n_fwd
    lo, hi = margin * spec.length, (1.0 - margin) * spec.length
    look = np.radians(look_angle_deg)
    poses = []
    for direction, m in ((1.0, n_fwd), (-1.0, n_back)):
        for k in range(m):
            phase = k / (m - 1) if m > 1 else 0.0
            s = lo + (hi - lo) * phase if direction > 0 else hi - (hi - lo) * phase
            t, e1, e2 = spec.frame(s)
            r = spec.base_radius(s)
            center = (
                spec.centerline(s)
                + lateral_offset * r * np.sin(2 * np.pi * phase) * e1
                + lateral_offset * r * np.sin(3 * np.pi * phase) * e2
            )
            yaw = look * np.sin(2 * np.pi * phase)
            pitch = look * np.sin(4 * np.pi * phase)
            fwd = direction * t
            fwd = np.cos(yaw) * fwd + np.sin(yaw) * e1
            fwd = np.cos(pitch) * fwd + np.sin(pitch) * e2
            poses.append(RigidPose.from_matrix(look_rotation(fwd, e2), center))
    return poses


@dataclass(frozen=True)
class RenderConfig:
    noise_sigma_rel: float = 0.01
    sigma_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma_rel < 0:
            raise InvalidSpec("noise_sigma_rel must be non-negative")


def wall_texture(points) -> np.ndarray:
    """Deterministic mucosa-like RGB pattern as a function of position."""
    p = np.asarray(points, dtype=np.float64)
    a = np.sin(0.45 * p[:, 0] + 0.3 * p[:, 2]) * np.sin(0.5 * p[:, 1] - 0.2 * p[:, 2])
    vessel = np.exp(-8.0 * np.sin(0.15 * p[:, 2] + 0.6 * p[:, 0] - 0.4 * p[:, 1]) ** 2)
    r = 190 + 40 * a - 50 * vessel
    g = 105 + 30 * a - 45 * vessel
    b = 100 + 20 * a - 30 * vessel
    return np.clip(np.stack([r, g, b], -1), 0, 255).astype(np.uint8)


def noise_generator(seed: int, frame_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, frame id); draws follow pixel order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, frame_id, 0x9E37])))


def render_depth(
    mesh: TriangleMesh,
    pose: RigidPose,
    k: CameraIntrinsics,
    cfg: RenderConfig,
    frame_id: int = 0,
    bvh: Optional[BVH] = None,
) -> DepthFrame:
    if mesh.is_empty or mesh.area() <= 0:
        raise DegenerateMesh("cannot render an empty or zero-area mesh")
    bvh = bvh or BVH(mesh)
    rays = k.pixel_rays().reshape(-1, 3)
    dirs = rays @ pose.R.T
    t, _ = bvh.raycast(pose.center, dirs, tmin=1e-9)
    hit = np.isfinite(t)
    depth = np.where(hit, t, 0.0)

    if cfg.noise_sigma_rel > 0:
        n = noise_generator(cfg.seed, frame_id).standard_normal(depth.size)
        depth = np.where(hit, depth * (1.0 + cfg.noise_sigma_rel * n), 0.0)
        depth = np.where(hit, np.maximum(depth, 1e-6), 0.0)
    std = np.where(hit, np.maximum(cfg.noise_sigma_rel * depth, cfg.sigma_floor), 0.0)

    color = np.zeros((depth.size, 3), np.uint8)
    if hit.any():
        color[hit] = wall_texture(pose.center + t[hit, None] * dirs[hit])
    shape = (k.height, k.width)
    return DepthFrame(depth.reshape(shape), std.reshape(shape), color.reshape(shape + (3,)), pose, k, frame_id)


def visible_from(points, normals, pose: RigidPose, k: CameraIntrinsics, bvh: BVH, rel_eps: float = 1e-6):
    """In-frustum, front-facing and unoccluded test for surface points."""
    cam = pose.world_to_camera(points)
    z = cam[:, 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    u = np.floor(k.fx * cam[:, 0] / zs + k.cx + 0.5)
    v = np.floor(k.fy * cam[:, 1] / zs + k.cy + 0.5)
    ok &= (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    to_cam = pose.center - points
    ok &= np.einsum("ij,ij->i", normals, to_cam) > 0
    idx = np.flatnonzero(ok)
    if len(idx):
        t, _ = bvh.raycast(pose.center, points[idx] - pose.center, tmin=0.0, tmax=1.0 - rel_eps)
        ok[idx[np.isfinite(t)]] = False
    return ok


def sample_sparse(
    mesh: TriangleMesh,
    poses: Sequence[RigidPose],
    k: CameraIntrinsics,
    n_points: int,
    seed: int = 0,
    min_views: int = 2,
    bvh: Optional[BVH] = None,
    max_batches: int = 50,
) -> SparsePointCloud:
    """Uniform surface samples seen by at least ``min_views`` cameras.

    Frame ids are the pose indices.
    """
    if n_points < 1:
        raise InvalidSpec("n_points must be >= 1")
    bvh = bvh or BVH(mesh)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A5]))
    normals_all = mesh.face_normals()
    kept_pts, kept_vis = [], []
    for _ in range(max_batches):
        pts, face = mesh.sample_surface(4 * n_points, rng)
        normals = normals_all[face]
        seen = np.stack([visible_from(pts, normals, p, k, bvh) for p in poses], axis=1)
        good = np.flatnonzero(seen.sum(axis=1) >= min_views)
        for i in good:
            kept_pts.append(pts[i])
            kept_vis.append(np.flatnonzero(seen[i]).tolist())
            if len(kept_pts) == n_points:
                return SparsePointCloud(np.array(kept_pts), kept_vis)
    if not kept_pts:
        raise NoVisibleSurface("no surface point is visible from enough cameras")
    raise NoVisibleSurface(f"only {len(kept_pts)} of {n_points} visible points found")
