"""Indexed triangle mesh and watertightness audit."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangles are counter-clockwise seen from the positive (outside) side."""

    vertices: np.ndarray
    triangles: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        if self.colors is not None:
            c = np.asarray(self.colors)
            if c.shape != (len(v), 3):
                raise ValueError("colors must be (n_vertices, 3)")
            object.__setattr__(self, "colors", np.clip(np.rint(c), 0, 255).astype(np.uint8))

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    @property
    def corners(self) -> np.ndarray:
        """Triangle vertex coordinates, shape (F, 3, 3)."""
        return self.vertices[self.triangles]

    def face_normals(self, normalize=True) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if normalize:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive when normals point outward."""
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def extent(self) -> float:
        """Bounding-box diagonal length."""
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def transformed(self, transform) -> TriangleMesh:
        """Apply a similarity transform; orientation is preserved since scale > 0."""
        return TriangleMesh(transform.apply(self.vertices), self.triangles, self.colors)

    def sample_surface(self, n: int, rng: np.random.Generator):
        """Area-weighted uniform surface samples; returns (points, face_index)."""
        areas = self.face_areas()
        face = rng.choice(len(areas), size=n, p=areas / areas.sum())
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        c = self.corners[face]
        pts = (
            (1.0 - r1)[:, None] * c[:, 0]
            + (r1 * (1.0 - r2))[:, None] * c[:, 1]
            + (r1 * r2)[:, None] * c[:, 2]
        )
        return pts, face


@dataclass(frozen=True)
class WatertightReport:
    boundary_edge_count: int
    non_manifold_edge_count: int
    connected_component_count: int

    @property
    def is_watertight(self) -> bool:
        return self.boundary_edge_count == 0 and self.non_manifold_edge_count == 0

    def as_dict(self) -> dict:
        return {
            "boundary_edge_count": self.boundary_edge_count,
            "non_manifold_edge_count": self.non_manifold_edge_count,
            "connected_component_count": self.connected_component_count,
            "is_watertight": self.is_watertight,
        }


def check_watertight(mesh: TriangleMesh) -> WatertightReport:
    f = mesh.triangles
    if len(f) == 0:
        return WatertightReport(0, 0, 0)
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    boundary = int(np.count_nonzero(counts == 1))
    non_manifold = int(np.count_nonzero(counts >= 3))

    # components over referenced vertices, linked through triangle edges
    used, remap = np.unique(f, return_inverse=True)
    g = remap.reshape(-1, 3)
    rows = np.concatenate([g[:, 0], g[:, 1]])
    cols = np.concatenate([g[:, 1], g[:, 2]])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(used), len(used)))
    n_comp, _ = connected_components(adj, directed=False)
    return WatertightReport(boundary, non_manifold, int(n_comp))
