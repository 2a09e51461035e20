"""Marching-cubes extraction of the TSDF zero level set.

The 256-case triangle table is generated at import time instead of being
typed in.  For each sign configuration the iso-contour is traced on every
cube face, using a fixed rule on ambiguous faces (segments isolate the
non-negative corners).  The rule depends only on the four corner signs of a
face, so two cubes sharing a face always produce the same contour there and
the extracted surface closes up across cubes.  Segments are oriented so that
the resulting loops wind counter-clockwise when seen from the non-negative
side; each loop is triangulated with chords that stay inside the cube.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import EmptyVolume
from .mesh import TriangleMesh

# corner i sits at offset (i & 1, (i >> 1) & 1, (i >> 2) & 1)
CORNERS = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)], dtype=np.int64)


def _edge_list():
    edges = []
    for axis in range(3):
        for a in range(8):
            if not (a >> axis) & 1:
                edges.append((a, a | (1 << axis), axis))
    return edges


EDGES = _edge_list()  # (corner_a, corner_b, axis), corner_a has the lower coordinate
EDGE_START = np.array([e[0] for e in EDGES])
EDGE_AXIS = np.array([e[2] for e in EDGES])


def _faces():
    faces = []
    for axis in range(3):
        for side in (0, 1):
            corners = [i for i in range(8) if ((i >> axis) & 1) == side]
            edges = [k for k, (a, b, _) in enumerate(EDGES) if a in corners and b in corners]
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            faces.append((corners, edges, normal))
    return faces


_EDGE_FACES = [
    frozenset(f for f, (_, edges, _) in enumerate(_faces()) if k in edges) for k in range(12)
]


def _case_loops(case: int):
    """Oriented contour loops (lists of edge ids) for one sign configuration.

    Bit i of ``case`` set means corner i is negative.
    """
    neg = [(case >> i) & 1 == 1 for i in range(8)]
    mid = np.array([(CORNERS[a] + CORNERS[b]) / 2.0 for a, b, _ in EDGES])
    succ = {}
    for corners, edges, normal in _faces():
        crossing = [k for k in edges if neg[EDGES[k][0]] != neg[EDGES[k][1]]]
        if not crossing:
            continue
        if len(crossing) == 2:
            segments = [tuple(crossing)]
        else:
            # ambiguous face: cut off each non-negative corner on its own
            segments = []
            for c in corners:
                if not neg[c]:
                    segments.append(tuple(k for k in crossing if c in EDGES[k][:2]))
        for a, b in segments:
            d = mid[b] - mid[a]
            left = [c for c in corners if np.cross(d, CORNERS[c] - mid[a]) @ normal > 0]
            if any(neg[c] for c in left):
                a, b = b, a
            succ[a] = b
    loops = []
    remaining = dict(succ)
    while remaining:
        first = min(remaining)
        loop = [first]
        nxt = remaining.pop(first)
        while nxt != first:
            loop.append(nxt)
            nxt = remaining.pop(nxt)
        loops.append(loop)
    return loops


def _triangulations(idx):
    """All triangulations of the convex polygon with vertex labels ``idx``."""
    if len(idx) < 3:
        yield []
        return
    a, b = idx[0], idx[-1]
    for k in range(1, len(idx) - 1):
        for left in _triangulations(idx[: k + 1]):
            for right in _triangulations(idx[k:]):
                yield left + [(a, idx[k], b)] + right


def _triangulate_loop(loop):
    """Triangulate a loop so that no chord runs along a cube face.

    A chord between two edge points on a common face would also be an edge
    of the neighbouring cube's triangulation, giving a non-manifold edge.
    Among admissible triangulations the one with the shortest chords wins.
    """
    mid = np.array([(CORNERS[a] + CORNERS[b]) / 2.0 for a, b, _ in EDGES])
    n = len(loop)
    best, best_cost = None, np.inf
    for tris in _triangulations(list(range(n))):
        cost = 0.0
        ok = True
        for t in tris:
            for i, j in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
                if (j - i) % n in (1, n - 1):
                    continue
                if _EDGE_FACES[loop[i]] & _EDGE_FACES[loop[j]]:
                    ok = False
                    break
                cost += np.linalg.norm(mid[loop[i]] - mid[loop[j]])
            if not ok:
                break
        if ok and cost < best_cost - 1e-12:
            best, best_cost = tris, cost
    if best is None:
        raise RuntimeError(f"no admissible triangulation for loop {loop}")
    return [(loop[i], loop[j], loop[k]) for i, j, k in best]


@lru_cache(maxsize=1)
def triangle_table() -> np.ndarray:
    """Array (256, max_tris, 3) of cube edge ids, padded with -1."""
    per_case = []
    for case in range(256):
        tris = []
        for loop in _case_loops(case):
            tris.extend(_triangulate_loop(loop))
        per_case.append(tris)
    width = max(len(t) for t in per_case)
    table = np.full((256, width, 3), -1, dtype=np.int64)
    for case, tris in enumerate(per_case):
        if tris:
            table[case, : len(tris)] = tris
    return table


def marching_cubes_grid(values, weights=None, min_weight=1e-6, colors=None, origin=(0.0, 0.0, 0.0), spacing=1.0):
    """Triangulate the zero set of a (nx, ny, nz) scalar grid.

    Cubes with any corner weight below ``min_weight`` are skipped.  Vertices
    are welded exactly by global edge id, so shared edges produce one vertex.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 2:
        raise EmptyVolume("need at least 2 samples per axis")
    nx, ny, nz = values.shape
    neg = values < 0

    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for i, (dx, dy, dz) in enumerate(CORNERS):
        case |= neg[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.int64) << i
    active = (case != 0) & (case != 255)
    if weights is not None:
        ok = np.asarray(weights) >= min_weight
        for dx, dy, dz in CORNERS:
            active &= ok[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz]

    cube_idx = np.argwhere(active)  # C order: deterministic
    if len(cube_idx) == 0:
        return TriangleMesh.empty()
    table = triangle_table()
    cube_tris = table[case[tuple(cube_idx.T)]]  # (M, T, 3)
    valid = cube_tris[:, :, 0] >= 0
    which_cube, which_tri = np.nonzero(valid)
    local_edges = cube_tris[which_cube, which_tri]  # (K, 3)
    base = cube_idx[which_cube]  # (K, 3)

    start = base[:, None, :] + CORNERS[EDGE_START[local_edges]]
    axis = EDGE_AXIS[local_edges]
    keys = ((start[..., 0] * ny + start[..., 1]) * nz + start[..., 2]) * 3 + axis
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    faces = inverse.reshape(-1, 3)

    ax = uniq % 3
    lin = uniq // 3
    p0 = np.stack(np.unravel_index(lin, (nx, ny, nz)), axis=1)
    p1 = p0.copy()
    p1[np.arange(len(p1)), ax] += 1
    v0 = values[tuple(p0.T)]
    v1 = values[tuple(p1.T)]
    t = v0 / (v0 - v1)
    verts = np.asarray(origin, dtype=np.float64) + spacing * (p0 + t[:, None] * (p1 - p0))

    vcol = None
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64)
        vcol = (1.0 - t)[:, None] * colors[tuple(p0.T)] + t[:, None] * colors[tuple(p1.T)]

    degenerate = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    return TriangleMesh(verts, faces[~degenerate], vcol)


def marching_cubes(vol, min_weight: float = 1e-6) -> TriangleMesh:
    """Extract the colored zero-level mesh from a :class:`TsdfVolume`."""
    if min(vol.dims) < 2:
        raise EmptyVolume("volume needs at least 2 voxels per axis")
    return marching_cubes_grid(
        vol.tsdf, vol.weight, min_weight, colors=vol.color, origin=vol.origin, spacing=vol.voxel_size
    )
