"""Readers and writers for every on-disk format the pipeline exchanges.

Binary formats are little-endian.  Parse failures raise
:class:`~cavityrecon.errors.FormatError` with the file path and byte offset.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .depth import DepthFrame, SparsePointCloud
from .errors import DataError, FormatError
from .geometry import CameraIntrinsics, RigidPose
from .matching import DescriptorMap
from .mesh import TriangleMesh

# ---------------------------------------------------------------- intrinsics


def write_intrinsics(path, k: CameraIntrinsics) -> None:
    Path(path).write_text(f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.width} {k.height}\n")


def read_intrinsics(path) -> CameraIntrinsics:
    path = Path(path)
    parts = _read_text(path).split()
    if len(parts) != 6:
        raise FormatError(path, 0, f"expected 6 values, got {len(parts)}")
    try:
        fx, fy, cx, cy = (float(x) for x in parts[:4])
        return CameraIntrinsics(fx, fy, cx, cy, int(parts[4]), int(parts[5]))
    except ValueError as exc:
        raise FormatError(path, 0, str(exc)) from None


def _read_text(path: Path) -> str:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return path.read_text()


# ---------------------------------------------------------------- trajectory


def write_trajectory(path, poses, frame_ids=None) -> None:
    frame_ids = range(len(poses)) if frame_ids is None else frame_ids
    lines = []
    for fid, p in zip(frame_ids, poses):
        vals = list(p.translation) + list(p.rotation)
        lines.append(f"{int(fid)} " + " ".join(repr(float(x)) for x in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_trajectory(path) -> dict:
    """Map frame id -> camera-to-world :class:`RigidPose`, in file order."""
    path = Path(path)
    text = _read_text(path)
    poses = {}
    offset = 0
    for line in text.splitlines(keepends=True):
        fields = line.split()
        if fields and not fields[0].startswith("#"):
            if len(fields) != 8:
                raise FormatError(path, offset, f"expected 8 fields, got {len(fields)}")
            try:
                fid = int(fields[0])
                v = [float(x) for x in fields[1:]]
                poses[fid] = RigidPose(np.array(v[3:]), np.array(v[:3]))
            except ValueError as exc:
                raise FormatError(path, offset, str(exc)) from None
        offset += len(line.encode())
    return poses


# ---------------------------------------------------------------- depth / color

_DPTH = b"DPTH"


def write_depth(path, mean, stddev) -> None:
    mean = np.asarray(mean, dtype="<f4")
    h, w = mean.shape
    with open(path, "wb") as fh:
        fh.write(_DPTH + struct.pack("<II", w, h))
        fh.write(mean.tobytes())
        fh.write(np.asarray(stddev, dtype="<f4").tobytes())


def read_depth(path):
    """Return (mean, stddev) float64 arrays."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    buf = path.read_bytes()
    if buf[:4] != _DPTH:
        raise FormatError(path, 0, "bad magic, expected DPTH")
    if len(buf) < 12:
        raise FormatError(path, 4, "truncated header")
    w, h = struct.unpack_from("<II", buf, 4)
    n = w * h
    if len(buf) != 12 + 8 * n:
        raise FormatError(path, min(len(buf), 12 + 8 * n), f"expected {12 + 8 * n} bytes, got {len(buf)}")
    mean = np.frombuffer(buf, "<f4", n, 12).reshape(h, w).astype(np.float64)
    std = np.frombuffer(buf, "<f4", n, 12 + 4 * n).reshape(h, w).astype(np.float64)
    bad = ~np.isfinite(mean) | (mean < 0)
    if bad.any():
        first = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError(path, 12 + 4 * first, "negative or non-finite depth")
    return mean, std


def write_ppm(path, rgb) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    buf = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(path, pos, "truncated PPM header")
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError(path, 0, "only binary 8-bit PPM (P6, maxval 255) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    if len(buf) - pos != 3 * w * h:
        raise FormatError(path, pos, "pixel data size mismatch")
    return np.frombuffer(buf, np.uint8, 3 * w * h, pos).reshape(h, w, 3).copy()


def write_frame(directory, frame: DepthFrame) -> None:
    d = Path(directory)
    (d / "depth").mkdir(parents=True, exist_ok=True)
    (d / "color").mkdir(parents=True, exist_ok=True)
    write_depth(d / "depth" / f"frame_{frame.frame_id:05d}.dpth", frame.mean, frame.stddev)
    write_ppm(d / "color" / f"frame_{frame.frame_id:05d}.ppm", frame.color)


def read_frame(directory, frame_id: int, pose: RigidPose, k: CameraIntrinsics) -> DepthFrame:
    d = Path(directory)
    dpath = d / "depth" / f"frame_{frame_id:05d}.dpth"
    mean, std = read_depth(dpath)
    if mean.shape != (k.height, k.width):
        raise FormatError(dpath, 4, f"size {mean.shape[::-1]} does not match intrinsics {k.width}x{k.height}")
    cpath = d / "color" / f"frame_{frame_id:05d}.ppm"
    color = read_ppm(cpath) if cpath.exists() else np.full(mean.shape + (3,), 128, np.uint8)
    return DepthFrame(mean, std, color, pose, k, frame_id)


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(path: Path, buf: bytes):
    end = buf.find(b"end_header")
    if not buf.startswith(b"ply") or end < 0:
        raise FormatError(path, 0, "not a PLY file")
    body = buf.index(b"\n", end) + 1
    fmt = None
    elements = []
    for line in buf[:end].decode("ascii", "replace").splitlines():
        t = line.split()
        if not t or t[0] in ("ply", "comment", "obj_info"):
            continue
        if t[0] == "format":
            fmt = t[1]
        elif t[0] == "element":
            elements.append((t[1], int(t[2]), []))
        elif t[0] == "property":
            if t[1] == "list":
                elements[-1][2].append((t[4], ("list", _PLY_TYPES[t[2]], _PLY_TYPES[t[3]])))
            else:
                elements[-1][2].append((t[2], _PLY_TYPES[t[1]]))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise FormatError(path, 0, f"unsupported PLY format {fmt}")
    return fmt, elements, body


def _read_ply(path):
    """Return {element: {property: array or list}} for ASCII or binary PLY."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    buf = path.read_bytes()
    fmt, elements, pos = _parse_ply_header(path, buf)
    out = {}
    if fmt == "ascii":
        tokens = buf[pos:].split()
        ti = 0
        for name, count, props in elements:
            cols = {p[0]: [] for p in props}
            for _ in range(count):
                for pname, ptype in props:
                    if isinstance(ptype, tuple):
                        n = int(tokens[ti])
                        cols[pname].append([float(x) for x in tokens[ti + 1 : ti + 1 + n]])
                        ti += 1 + n
                    else:
                        cols[pname].append(float(tokens[ti]))
                        ti += 1
            out[name] = {k: (v if isinstance(dict(props)[k], tuple) else np.array(v)) for k, v in cols.items()}
        return out
    endian = "<" if fmt == "binary_little_endian" else ">"
    for name, count, props in elements:
        has_list = any(isinstance(p[1], tuple) for p in props)
        if not has_list:
            dt = np.dtype([(p[0], endian + p[1]) for p in props])
            if pos + dt.itemsize * count > len(buf):
                raise FormatError(path, pos, f"truncated {name} element")
            arr = np.frombuffer(buf, dt, count, pos)
            pos += dt.itemsize * count
            out[name] = {p[0]: arr[p[0]].astype(np.float64) for p in props}
            continue
        cols = {p[0]: [] for p in props}
        for _ in range(count):
            for pname, ptype in props:
                if isinstance(ptype, tuple):
                    ct, it = np.dtype(endian + ptype[1]), np.dtype(endian + ptype[2])
                    if pos + ct.itemsize > len(buf):
                        raise FormatError(path, pos, f"truncated {name} element")
                    n = int(np.frombuffer(buf, ct, 1, pos)[0])
                    pos += ct.itemsize
                    if pos + it.itemsize * n > len(buf):
                        raise FormatError(path, pos, f"truncated {name} element")
                    cols[pname].append(np.frombuffer(buf, it, n, pos).tolist())
                    pos += it.itemsize * n
                else:
                    dt = np.dtype(endian + ptype)
                    cols[pname].append(float(np.frombuffer(buf, dt, 1, pos)[0]))
                    pos += dt.itemsize
        out[name] = {k: (v if isinstance(dict(props)[k], tuple) else np.array(v)) for k, v in cols.items()}
    return out


def write_mesh_ply(path, mesh: TriangleMesh, double: bool = False) -> None:
    """Binary little-endian PLY with ``x y z red green blue`` and u32 faces."""
    ftype = "double" if double else "float"
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(mesh.vertices)}",
        f"property {ftype} x",
        f"property {ftype} y",
        f"property {ftype} z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {len(mesh.triangles)}",
        "property list uchar uint vertex_indices",
        "end_header",
    ]
    fdt = "<f8" if double else "<f4"
    vdt = np.dtype([("x", fdt), ("y", fdt), ("z", fdt), ("r", "u1"), ("g", "u1"), ("b", "u1")])
    v = np.empty(len(mesh.vertices), vdt)
    v["x"], v["y"], v["z"] = mesh.vertices.T
    colors = mesh.colors if mesh.colors is not None else np.full((len(mesh.vertices), 3), 200, np.uint8)
    v["r"], v["g"], v["b"] = colors.T
    fdt_ = np.dtype([("n", "u1"), ("i", "<u4", 3)])
    f = np.empty(len(mesh.triangles), fdt_)
    f["n"] = 3
    f["i"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(v.tobytes())
        fh.write(f.tobytes())


def read_mesh_ply(path) -> TriangleMesh:
    """Read an ASCII or binary PLY mesh; colors are optional."""
    path = Path(path)
    buf = path.read_bytes() if path.exists() else None
    if buf is None:
        raise DataError(f"missing file: {path}")
    fmt, elements, pos = _parse_ply_header(path, buf)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise FormatError(path, 0, "no vertex element")
    # fast path: binary vertex block followed by triangle-only faces
    if fmt == "binary_little_endian" and names[:2] == ["vertex", "face"] and len(elements) == 2:
        _, nv, vprops = elements[0]
        _, nf, fprops = elements[1]
        if all(not isinstance(p[1], tuple) for p in vprops) and len(fprops) == 1 and isinstance(fprops[0][1], tuple):
            vdt = np.dtype([(p[0], "<" + p[1]) for p in vprops])
            ct, it = fprops[0][1][1], fprops[0][1][2]
            fdt = np.dtype([("n", "<" + ct), ("i", "<" + it, 3)])
            need = pos + vdt.itemsize * nv + fdt.itemsize * nf
            if len(buf) >= need:
                v = np.frombuffer(buf, vdt, nv, pos)
                f = np.frombuffer(buf, fdt, nf, pos + vdt.itemsize * nv)
                if nf == 0 or np.all(f["n"] == 3):
                    return _mesh_from_columns({k: v[k].astype(np.float64) for k in vdt.names}, f["i"].astype(np.int64))
    data = _read_ply(path)
    faces = np.zeros((0, 3), np.int64)
    if "face" in data:
        lists = next(iter(v for v in data["face"].values() if isinstance(v, list)), [])
        tris = []
        for poly in lists:
            for i in range(1, len(poly) - 1):
                tris.append((poly[0], poly[i], poly[i + 1]))
        faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return _mesh_from_columns(data["vertex"], faces)


def _mesh_from_columns(cols, faces) -> TriangleMesh:
    verts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1)
    return TriangleMesh(verts, faces, colors)


def write_cloud_ply(path, cloud: SparsePointCloud) -> None:
    """ASCII PLY with a per-point ``visibility`` list of u32 frame ids."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property list uint uint visibility",
        "end_header",
    ]
    for p, vis in zip(cloud.points, cloud.visibility):
        ids = sorted(vis)
        lines.append(" ".join(repr(float(x)) for x in p) + f" {len(ids)}" + "".join(f" {i}" for i in ids))
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud_ply(path) -> SparsePointCloud:
    data = _read_ply(path)
    if "vertex" not in data:
        raise FormatError(path, 0, "no vertex element")
    v = data["vertex"]
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1) if len(v["x"]) else np.zeros((0, 3))
    vis = v.get("visibility")
    if vis is None:
        vis = [[] for _ in range(len(pts))]
    return SparsePointCloud(pts, [[int(i) for i in ids] for ids in vis])


# ---------------------------------------------------------------- descriptors

_DESC = b"DESC"


def write_descriptors(path, dmap: DescriptorMap) -> None:
    with open(path, "wb") as fh:
        fh.write(_DESC + struct.pack("<III", dmap.width, dmap.height, dmap.channels))
        fh.write(np.asarray(dmap.data, dtype="<f4").tobytes())


def read_descriptors(path) -> DescriptorMap:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    buf = path.read_bytes()
    if buf[:4] != _DESC:
        raise FormatError(path, 0, "bad magic, expected DESC")
    if len(buf) < 16:
        raise FormatError(path, 4, "truncated header")
    w, h, c = struct.unpack_from("<III", buf, 4)
    n = w * h * c
    if len(buf) != 16 + 4 * n:
        raise FormatError(path, min(len(buf), 16 + 4 * n), f"expected {16 + 4 * n} bytes, got {len(buf)}")
    return DescriptorMap(np.frombuffer(buf, "<f4", n, 16).reshape(h, w, c).astype(np.float64))


def read_queries(path) -> np.ndarray:
    path = Path(path)
    rows = []
    offset = 0
    for line in _read_text(path).splitlines(keepends=True):
        f = line.split()
        if f and not f[0].startswith("#"):
            try:
                rows.append((float(f[0]), float(f[1])))
            except (ValueError, IndexError):
                raise FormatError(path, offset, "expected 'u v'") from None
        offset += len(line.encode())
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def write_matches(path, rows) -> None:
    lines = [" ".join(f"{x:.6f}" for x in r) for r in np.asarray(rows).reshape(-1, 5)]
    Path(path).write_text("".join(line + "\n" for line in lines))


# ---------------------------------------------------------------- TSDF dump

_TSDF = b"TSDF"


def write_tsdf(path, vol) -> None:
    nx, ny, nz = vol.dims
    dt = np.dtype([("tsdf", "<f4"), ("weight", "<f4"), ("rgb", "u1", 3)])
    rec = np.empty(vol.tsdf.size, dt)
    # x-fastest order
    rec["tsdf"] = vol.tsdf.ravel(order="F")
    rec["weight"] = vol.weight.ravel(order="F")
    rec["rgb"] = np.clip(np.rint(vol.color), 0, 255).astype(np.uint8).transpose(2, 1, 0, 3).reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(_TSDF + struct.pack("<III", nx, ny, nz))
        fh.write(struct.pack("<4f", *vol.origin, vol.voxel_size))
        fh.write(rec.tobytes())


def read_tsdf(path):
    from .fusion import TsdfVolume

    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != _TSDF:
        raise FormatError(path, 0, "bad magic, expected TSDF")
    nx, ny, nz = struct.unpack_from("<III", buf, 4)
    ox, oy, oz, vs = struct.unpack_from("<4f", buf, 16)
    dt = np.dtype([("tsdf", "<f4"), ("weight", "<f4"), ("rgb", "u1", 3)])
    n = nx * ny * nz
    if len(buf) != 32 + dt.itemsize * n:
        raise FormatError(path, 32, "voxel payload size mismatch")
    rec = np.frombuffer(buf, dt, n, 32)
    shape = (nx, ny, nz)
    return TsdfVolume(
        np.array([ox, oy, oz]),
        float(vs),
        rec["tsdf"].reshape(shape, order="F").astype(np.float64),
        rec["weight"].reshape(shape, order="F").astype(np.float64),
        rec["rgb"].reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3).astype(np.float64),
    )
