"""Bounding-volume hierarchy over triangles: nearest-point and ray queries.

The tree is a median split on triangle centroids along the longest centroid
axis, stored as flat arrays so the numba kernels can traverse it with an
explicit stack.  Queries are independent per point/ray, so results do not
depend on evaluation order.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .mesh import TriangleMesh

LEAF_SIZE = 4
_STACK = 128


@njit(cache=True)
def _build(bmin, bmax, cent, leaf_size):
    n = cent.shape[0]
    order = np.arange(n)
    max_nodes = 2 * n + 1
    node_min = np.empty((max_nodes, 3))
    node_max = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    start = np.zeros(max_nodes, np.int64)
    count = np.zeros(max_nodes, np.int64)

    st_node = np.empty(max_nodes, np.int64)
    st_lo = np.empty(max_nodes, np.int64)
    st_hi = np.empty(max_nodes, np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for a in range(3):
            node_min[node, a] = np.inf
            node_max[node, a] = -np.inf
        for k in range(lo, hi):
            t = order[k]
            for a in range(3):
                if bmin[t, a] < node_min[node, a]:
                    node_min[node, a] = bmin[t, a]
                if bmax[t, a] > node_max[node, a]:
                    node_max[node, a] = bmax[t, a]
                if cent[t, a] < cmin[a]:
                    cmin[a] = cent[t, a]
                if cent[t, a] > cmax[a]:
                    cmax[a] = cent[t, a]
        axis = 0
        ext = cmax[0] - cmin[0]
        for a in range(1, 3):
            if cmax[a] - cmin[a] > ext:
                ext = cmax[a] - cmin[a]
                axis = a
        if hi - lo <= leaf_size or ext <= 0.0:
            start[node] = lo
            count[node] = hi - lo
            continue
        sub = order[lo:hi].copy()
        keys = np.empty(hi - lo)
        for k in range(hi - lo):
            keys[k] = cent[sub[k], axis]
        idx = np.argsort(keys, kind="mergesort")
        for k in range(hi - lo):
            order[lo + k] = sub[idx[k]]
        mid = (lo + hi) // 2
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp] = n_nodes
        st_lo[sp] = lo
        st_hi[sp] = mid
        sp += 1
        st_node[sp] = n_nodes + 1
        st_lo[sp] = mid
        st_hi[sp] = hi
        sp += 1
        n_nodes += 2
    return order, node_min[:n_nodes], node_max[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes]


@njit(cache=True, inline="always")
def _box_dist2(px, py, pz, bmin, bmax):
    d = 0.0
    v = bmin[0] - px if px < bmin[0] else (px - bmax[0] if px > bmax[0] else 0.0)
    d += v * v
    v = bmin[1] - py if py < bmin[1] else (py - bmax[1] if py > bmax[1] else 0.0)
    d += v * v
    v = bmin[2] - pz if pz < bmin[2] else (pz - bmax[2] if pz > bmax[2] else 0.0)
    d += v * v
    return d


@njit(cache=True)
def closest_point_on_triangle(px, py, pz, tri):
    """Closest point of a (3, 3) triangle to p by Voronoi-region classification."""
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    bx, by, bz = tri[1, 0], tri[1, 1], tri[1, 2]
    cx, cy, cz = tri[2, 0], tri[2, 1], tri[2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True)
def _closest(points, tris, order, node_min, node_max, left, right, start, count):
    n = points.shape[0]
    out_d2 = np.empty(n)
    out_face = np.empty(n, np.int64)
    out_pt = np.empty((n, 3))
    stack = np.empty(_STACK, np.int64)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        best_face = -1
        bqx = bqy = bqz = 0.0
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(px, py, pz, node_min[node], node_max[node]) > best:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    qx, qy, qz = closest_point_on_triangle(px, py, pz, tris[f])
                    dx = qx - px
                    dy = qy - py
                    dz = qz - pz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best or (d2 == best and f < best_face):
                        best = d2
                        best_face = f
                        bqx, bqy, bqz = qx, qy, qz
            else:
                l = left[node]
                r = right[node]
                dl = _box_dist2(px, py, pz, node_min[l], node_max[l])
                dr = _box_dist2(px, py, pz, node_min[r], node_max[r])
                # nearer child on top of the stack
                if dl <= dr:
                    if dr <= best:
                        stack[sp] = r
                        sp += 1
                    if dl <= best:
                        stack[sp] = l
                        sp += 1
                else:
                    if dl <= best:
                        stack[sp] = l
                        sp += 1
                    if dr <= best:
                        stack[sp] = r
                        sp += 1
        out_d2[i] = best
        out_face[i] = best_face
        out_pt[i, 0] = bqx
        out_pt[i, 1] = bqy
        out_pt[i, 2] = bqz
    return np.sqrt(out_d2), out_face, out_pt


@njit(cache=True, inline="always")
def _slab(ox, oy, oz, ix, iy, iz, bmin, bmax, tmin, tmax):
    t0 = (bmin[0] - ox) * ix
    t1 = (bmax[0] - ox) * ix
    if t0 > t1:
        t0, t1 = t1, t0
    lo = max(tmin, t0)
    hi = min(tmax, t1)
    t0 = (bmin[1] - oy) * iy
    t1 = (bmax[1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    lo = max(lo, t0)
    hi = min(hi, t1)
    t0 = (bmin[2] - oz) * iz
    t1 = (bmax[2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    lo = max(lo, t0)
    hi = min(hi, t1)
    if lo <= hi:
        return lo
    return np.inf


@njit(cache=True, inline="always")
def _ray_triangle(ox, oy, oz, dx, dy, dz, tri):
    """Moller-Trumbore, two-sided; returns inf on miss."""
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    e1x, e1y, e1z = tri[1, 0] - ax, tri[1, 1] - ay, tri[1, 2] - az
    e2x, e2y, e2z = tri[2, 0] - ax, tri[2, 1] - ay, tri[2, 2] - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det
    tx, ty, tz = ox - ax, oy - ay, oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    return (e2x * qx + e2y * qy + e2z * qz) * inv


@njit(cache=True)
def _raycast(origins, dirs, tmin, tmax, tris, order, node_min, node_max, left, right, start, count):
    n = origins.shape[0]
    out_t = np.full(n, np.inf)
    out_face = np.full(n, -1, np.int64)
    stack = np.empty(_STACK, np.int64)
    big = 1e300
    for i in range(n):
        o = origins[i]
        d = dirs[i]
        ix = 1.0 / d[0] if d[0] != 0.0 else big
        iy = 1.0 / d[1] if d[1] != 0.0 else big
        iz = 1.0 / d[2] if d[2] != 0.0 else big
        best = tmax
        best_face = -1
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _slab(o[0], o[1], o[2], ix, iy, iz, node_min[node], node_max[node], tmin, best) == np.inf:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    t = _ray_triangle(o[0], o[1], o[2], d[0], d[1], d[2], tris[f])
                    if t >= tmin and (t < best or (t == best and f < best_face)):
                        best = t
                        best_face = f
            else:
                l = left[node]
                r = right[node]
                tl = _slab(o[0], o[1], o[2], ix, iy, iz, node_min[l], node_max[l], tmin, best)
                tr = _slab(o[0], o[1], o[2], ix, iy, iz, node_min[r], node_max[r], tmin, best)
                if tl <= tr:
                    if tr != np.inf:
                        stack[sp] = r
                        sp += 1
                    if tl != np.inf:
                        stack[sp] = l
                        sp += 1
                else:
                    if tl != np.inf:
                        stack[sp] = l
                        sp += 1
                    if tr != np.inf:
                        stack[sp] = r
                        sp += 1
        if best_face >= 0:
            out_t[i] = best
            out_face[i] = best_face
    return out_t, out_face


class BVH:
    """Immutable acceleration structure over a mesh; safe for concurrent readers."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        if mesh.is_empty:
            raise ValueError("cannot build a BVH over an empty mesh")
        self.mesh = mesh
        self.tris = np.ascontiguousarray(mesh.corners)
        bmin = self.tris.min(axis=1)
        bmax = self.tris.max(axis=1)
        cent = self.tris.mean(axis=1)
        (
            self.order,
            self.node_min,
            self.node_max,
            self.left,
            self.right,
            self.start,
            self.count,
        ) = _build(bmin, bmax, cent, leaf_size)

    def _arrays(self):
        return (self.tris, self.order, self.node_min, self.node_max, self.left, self.right, self.start, self.count)

    def closest(self, points):
        """Return (distance, face_index, closest_point) for each query point."""
        p = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return _closest(p, *self._arrays())

    def raycast(self, origins, dirs, tmin=0.0, tmax=np.inf):
        """First hit parameter ``t`` along ``o + t d`` (inf on miss) and face index."""
        d = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
        o = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), d.shape))
        return _raycast(o, d, float(tmin), float(tmax), *self._arrays())
