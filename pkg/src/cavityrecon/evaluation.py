"""Evaluation toolkit: point-to-mesh distances, trimmed Sim3 ICP against a
mesh, and cross-sectional areas along a camera trajectory."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .bvh import BVH
from .errors import AllSectionsFailed, EmptyMesh, NoIntersection, OpenContour, ReconError, TooFewPoints
from .geometry import RigidPose, SimilarityTransform
from .mesh import TriangleMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DistanceStats:
    mean: float
    stddev: float
    median: float
    max: float
    per_point: Optional[np.ndarray] = None

    @classmethod
    def from_distances(cls, d, keep_per_point=True) -> DistanceStats:
        d = np.asarray(d, dtype=np.float64)
        return cls(float(d.mean()), float(d.std()), float(np.median(d)), float(d.max()), d if keep_per_point else None)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stddev": self.stddev, "median": self.median, "max": self.max}


def point_to_mesh(points, mesh: TriangleMesh, bvh: Optional[BVH] = None) -> DistanceStats:
    """Exact Euclidean distance from each point to the nearest triangle."""
    if mesh.is_empty:
        raise EmptyMesh("point_to_mesh needs a non-empty mesh")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("no query points")
    bvh = bvh or BVH(mesh)
    d, _, _ = bvh.closest(pts)
    return DistanceStats.from_distances(d)


# ------------------------------------------------------------------ Sim3


def estimate_similarity(src, dst, weights=None) -> SimilarityTransform:
    """Closed-form least-squares similarity mapping ``src`` onto ``dst``.

    SVD of the weighted cross-covariance with a reflection guard; scale is
    the ratio of the singular-value trace to the source variance.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    cov = (xd * w[:, None]).T @ xs
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    var_s = float(w @ np.einsum("ij,ij->i", xs, xs))
    scale = float((D * S).sum() / var_s)
    t = mu_d - scale * R @ mu_s
    return SimilarityTransform.from_matrix(scale, R, t)


@dataclass(frozen=True)
class RegistrationConfig:
    max_iters: int = 100
    trim_fraction: float = 0.1
    tol: Optional[float] = None  # default 1e-7 * target extent
    anderson_memory: int = 5  # 0 = plain ICP

    def __post_init__(self):
        if not 0 <= self.trim_fraction < 1:
            raise ValueError("trim_fraction must be in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.anderson_memory < 0:
            raise ValueError("anderson_memory must be >= 0")


@dataclass(eq=False)
class RegistrationResult:
    """Unpacks as ``transform, stats``; the rest is diagnostics."""

    transform: SimilarityTransform
    stats: DistanceStats
    trimmed_rms_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def __iter__(self):
        return iter((self.transform, self.stats))


def centroid_rms_init(source, target: TriangleMesh) -> SimilarityTransform:
    """Coarse alignment: match centroids and RMS radii, no rotation."""
    src = np.asarray(source, dtype=np.float64)
    areas = target.face_areas()
    cent = target.corners.mean(axis=1)
    c_t = (areas @ cent) / areas.sum()
    r_t = math.sqrt((areas @ np.sum((cent - c_t) ** 2, axis=1)) / areas.sum())
    c_s = src.mean(axis=0)
    r_s = math.sqrt(np.mean(np.sum((src - c_s) ** 2, axis=1)))
    s = r_t / r_s
    return SimilarityTransform(s, np.array([0.0, 0.0, 0.0, 1.0]), c_t - s * c_s)


def _sim3_params(T: SimilarityTransform, unit: float) -> np.ndarray:
    return np.concatenate([[math.log(T.scale)], Rotation.from_quat(T.rotation).as_rotvec(), T.translation / unit])


def _sim3_from_params(x, unit: float) -> SimilarityTransform:
    return SimilarityTransform(math.exp(x[0]), Rotation.from_rotvec(x[1:4]).as_quat(), x[4:] * unit)


def register_sim3(
    source,
    target: TriangleMesh,
    init: Optional[SimilarityTransform] = None,
    cfg: RegistrationConfig = RegistrationConfig(),
    bvh: Optional[BVH] = None,
) -> RegistrationResult:
    """Trimmed ICP over similarity transforms against closest points on a mesh.

    Each iteration keeps the ``1 - trim_fraction`` closest correspondences
    and re-solves the similarity in closed form.  The fixed-point iteration
    is sped up with Anderson acceleration on the 7 transform parameters; an
    accelerated step is only taken when it does not raise the trimmed RMS,
    so the recorded residual never increases.  Iteration stops when it
    changes by less than ``tol``.  The returned stats are over *all* source
    points after registration.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    if len(src) < 7:
        raise TooFewPoints(f"need at least 7 source points, got {len(src)}")
    if target.is_empty:
        raise EmptyMesh("registration target is empty")
    bvh = bvh or BVH(target)
    unit = max(target.extent(), 1e-300)
    tol = cfg.tol if cfg.tol is not None else 1e-7 * unit
    n_keep = max(7, int(math.ceil((1.0 - cfg.trim_fraction) * len(src))))

    def correspond(T):
        d, _, cp = bvh.closest(T.apply(src))
        keep = np.argsort(d, kind="stable")[:n_keep]
        return float(np.sqrt(np.mean(d[keep] ** 2))), keep, cp

    T = init or SimilarityTransform.identity()
    rms, keep, cp = correspond(T)
    history = [rms]
    gs, fs = [], []
    converged = rms == 0.0
    it = 0
    while not converged and it < cfg.max_iters:
        it += 1
        G = estimate_similarity(src[keep], cp[keep])
        x, g = _sim3_params(T, unit), _sim3_params(G, unit)
        gs.append(g)
        fs.append(g - x)
        del gs[: -cfg.anderson_memory - 1], fs[: -cfg.anderson_memory - 1]

        step = None
        if len(fs) > 1:
            dF = np.diff(np.array(fs), axis=0).T
            dG = np.diff(np.array(gs), axis=0).T
            gamma = np.linalg.lstsq(dF, fs[-1], rcond=None)[0]
            xa = g - dG @ gamma
            if np.all(np.isfinite(xa)) and abs(xa[0]) < 50:
                Ta = _sim3_from_params(xa, unit)
                cand = correspond(Ta)
                if cand[0] <= rms:
                    step = (Ta,) + cand
        if step is None:
            # plain ICP step; restart the acceleration history
            step = (G,) + correspond(G)
            gs, fs = gs[-1:], fs[-1:]
        T, new_rms, keep, cp = step
        history.append(new_rms)
        converged = abs(rms - new_rms) < tol or new_rms == 0.0
        rms = new_rms
    if not converged:
        log.warning("Sim3 ICP did not converge in %d iterations", cfg.max_iters)
    stats = point_to_mesh(T.apply(src), target, bvh)
    return RegistrationResult(T, stats, history, it, converged)


# ------------------------------------------------------------------ sections


@dataclass(frozen=True, eq=False)
class CrossSection:
    plane_origin: np.ndarray
    plane_normal: np.ndarray
    contour: np.ndarray  # (N + 1, 2) closed polyline in plane coordinates
    area: float


def _polygon_area(xy) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _contains_origin(xy) -> bool:
    x, y = xy[:, 0], xy[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    crosses = (y > 0) != (y2 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x + (0 - y) * (x2 - x) / (y2 - y)
    return bool(np.count_nonzero(crosses & (xi > 0)) % 2)


def plane_loops(mesh: TriangleMesh, origin, normal, tol: Optional[float] = None):
    """Intersect a mesh with a plane; returns (closed_loops, open_chains) of 3-D points."""
    V = mesh.vertices
    F = mesh.triangles
    d = (V - origin) @ normal
    pos = d >= 0
    fp = pos[F]
    mixed = np.flatnonzero(fp.any(axis=1) & ~fp.all(axis=1))
    if len(mixed) == 0:
        raise NoIntersection("plane does not cut the mesh")
    tol = 1e-6 * mesh.extent() if tol is None else tol

    point_of = {}
    adj = {}
    for f in mixed:
        tri = F[f]
        keys = []
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if pos[a] != pos[b]:
                key = (a, b) if a < b else (b, a)
                if key not in point_of:
                    i, j = key
                    t = d[i] / (d[i] - d[j])
                    point_of[key] = V[i] + t * (V[j] - V[i])
                keys.append(key)
        k0, k1 = keys
        adj.setdefault(k0, []).append(k1)
        adj.setdefault(k1, []).append(k0)

    if any(len(n) > 2 for n in adj.values()):
        raise OpenContour("non-manifold intersection: an edge is shared by more than two triangles")

    visited = set()
    loops, chains = [], []
    # open chains first: start from degree-1 endpoints
    for start in sorted(k for k, n in adj.items() if len(n) == 1):
        if start in visited:
            continue
        chain = _walk(start, adj, visited)
        pts = np.array([point_of[k] for k in chain])
        if np.linalg.norm(pts[0] - pts[-1]) <= tol:
            loops.append(pts)
        else:
            chains.append(pts)
    for start in sorted(adj):
        if start not in visited:
            loops.append(np.array([point_of[k] for k in _walk(start, adj, visited)]))
    return loops, chains


def _walk(start, adj, visited):
    seq = [start]
    visited.add(start)
    prev, cur = None, start
    while True:
        nxt = [n for n in adj[cur] if n != prev and n not in visited]
        if not nxt:
            return seq
        prev, cur = cur, nxt[0]
        visited.add(cur)
        seq.append(cur)


def cross_section(mesh: TriangleMesh, pose: RigidPose) -> CrossSection:
    """Section through the camera center, normal to the optical axis."""
    R = pose.R
    origin, normal = pose.center, R[:, 2]
    basis = R[:, :2]
    loops, chains = plane_loops(mesh, origin, normal)
    candidates = []
    for loop in loops:
        xy = (loop - origin) @ basis
        candidates.append((xy, abs(_polygon_area(xy))))
    enclosing = [c for c in candidates if _contains_origin(c[0])]
    if enclosing:
        xy, area = min(enclosing, key=lambda c: c[1])
    elif chains:
        raise OpenContour(f"{len(chains)} open contour chain(s) and no closed loop around the camera")
    elif candidates:
        xy, area = min(candidates, key=lambda c: float(np.linalg.norm(c[0].mean(axis=0))))
    else:
        raise NoIntersection("no closed contour")
    return CrossSection(origin.copy(), normal.copy(), np.vstack([xy, xy[:1]]), float(area))


@dataclass(eq=False)
class SectionSeries:
    mean_relative_difference: float
    skipped: int
    rows: list  # (pose index, recon area or nan, reference area or nan, relative difference or nan)


def cross_section_series(
    recon: TriangleMesh,
    reference: TriangleMesh,
    trajectory: Sequence[RigidPose],
    registration: SimilarityTransform,
) -> SectionSeries:
    """Mean |A_recon - A_ref| / A_ref over poses mapped into the reference frame."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    recon_reg = recon.transformed(registration)
    rows = []
    rel = []
    for i, pose in enumerate(trajectory):
        p = registration.apply_to_pose(pose)
        try:
            a_rec = cross_section(recon_reg, p).area
            a_ref = cross_section(reference, p).area
        except ReconError as exc:
            log.debug("pose %d skipped: %s", i, exc)
            rows.append((i, math.nan, math.nan, math.nan))
            continue
        r = abs(a_rec - a_ref) / a_ref
        rel.append(r)
        rows.append((i, a_rec, a_ref, r))
    if not rel:
        raise AllSectionsFailed(f"all {len(trajectory)} cross-sections failed")
    return SectionSeries(float(np.mean(rel)), len(trajectory) - len(rel), rows)
