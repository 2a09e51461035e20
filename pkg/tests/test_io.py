import struct

import numpy as np
import pytest

from cavityrecon import io
from cavityrecon.depth import DepthFrame, SparsePointCloud
from cavityrecon.errors import DataError, FormatError
from cavityrecon.fusion import TsdfVolume
from cavityrecon.geometry import CameraIntrinsics, RigidPose
from cavityrecon.matching import AnalyticDescriptor
from cavityrecon.mesh import TriangleMesh

from conftest import tetrahedron

K = CameraIntrinsics(120.0, 121.5, 159.5, 127.5, 320, 256)


def test_intrinsics_roundtrip(tmp_path):
    io.write_intrinsics(tmp_path / "k.txt", K)
    assert io.read_intrinsics(tmp_path / "k.txt") == K
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(FormatError):
        io.read_intrinsics(tmp_path / "bad.txt")


def test_trajectory_roundtrip_and_offsets(tmp_path):
    rng = np.random.default_rng(0)
    poses = [RigidPose(rng.normal(size=4), rng.normal(size=3)) for _ in range(5)]
    io.write_trajectory(tmp_path / "t.txt", poses, [3, 1, 4, 10, 5])
    back = io.read_trajectory(tmp_path / "t.txt")
    assert list(back) == [3, 1, 4, 10, 5]
    for p, q in zip(poses, back.values()):
        assert p.allclose(q, atol=0)

    good = "0 0 0 0 0 0 0 1\n"
    (tmp_path / "bad.txt").write_text(good + "1 0 0 0 0 0 1\n")
    with pytest.raises(FormatError) as exc:
        io.read_trajectory(tmp_path / "bad.txt")
    assert exc.value.offset == len(good)
    assert "bad.txt" in str(exc.value) and f"offset {len(good)}" in str(exc.value)
    (tmp_path / "bad2.txt").write_text(good + "1 0 0 zero 0 0 0 1\n")
    with pytest.raises(FormatError):
        io.read_trajectory(tmp_path / "bad2.txt")


def test_missing_file_named(tmp_path):
    with pytest.raises(DataError, match="nope.txt"):
        io.read_trajectory(tmp_path / "nope.txt")


def test_depth_layout(tmp_path):
    mean = np.arange(6, dtype=np.float64).reshape(2, 3) + 0.5
    std = mean / 10
    io.write_depth(tmp_path / "d.dpth", mean, std)
    buf = (tmp_path / "d.dpth").read_bytes()
    assert buf[:4] == b"DPTH" and struct.unpack_from("<II", buf, 4) == (3, 2)
    np.testing.assert_array_equal(np.frombuffer(buf, "<f4", 6, 12), mean.ravel().astype("f4"))
    m, s = io.read_depth(tmp_path / "d.dpth")
    np.testing.assert_allclose(m, mean)
    np.testing.assert_allclose(s, std.astype("f4"))


def test_depth_errors(tmp_path):
    p = tmp_path / "d.dpth"
    io.write_depth(p, np.ones((4, 4)), np.ones((4, 4)))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError):
        io.read_depth(p)
    p.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(FormatError) as exc:
        io.read_depth(p)
    assert exc.value.offset == 0
    bad = np.ones((2, 2))
    bad[1, 0] = -1.0
    io.write_depth(p, bad, bad)
    with pytest.raises(FormatError) as exc:
        io.read_depth(p)
    assert exc.value.offset == 12 + 4 * 2


def test_ppm_roundtrip(tmp_path):
    rgb = np.random.default_rng(1).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    io.write_ppm(tmp_path / "c.ppm", rgb)
    np.testing.assert_array_equal(io.read_ppm(tmp_path / "c.ppm"), rgb)
    (tmp_path / "x.ppm").write_bytes(b"P6\n# comment\n2 1\n255\n" + bytes(range(6)))
    assert io.read_ppm(tmp_path / "x.ppm").shape == (1, 2, 3)


def test_frame_roundtrip(tmp_path):
    k = CameraIntrinsics(10, 10, 3.5, 2.5, 8, 6)
    rng = np.random.default_rng(2)
    f = DepthFrame(rng.uniform(1, 2, (6, 8)), rng.uniform(0, 0.1, (6, 8)), rng.integers(0, 255, (6, 8, 3)), RigidPose.identity(), k, 7)
    io.write_frame(tmp_path, f)
    g = io.read_frame(tmp_path, 7, f.pose, k)
    np.testing.assert_allclose(g.mean, f.mean.astype("f4"))
    np.testing.assert_array_equal(g.color, f.color)
    with pytest.raises(FormatError):
        io.read_frame(tmp_path, 7, f.pose, CameraIntrinsics(10, 10, 3.5, 2.5, 9, 6))


def test_mesh_ply_binary_roundtrip(tmp_path):
    m = tetrahedron()
    m = TriangleMesh(m.vertices * 1.1, m.triangles, np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9], [250, 251, 252]]))
    for double in (False, True):
        io.write_mesh_ply(tmp_path / "m.ply", m, double=double)
        head = (tmp_path / "m.ply").read_bytes()[:300]
        assert b"format binary_little_endian 1.0" in head and b"property uchar red" in head
        back = io.read_mesh_ply(tmp_path / "m.ply")
        np.testing.assert_allclose(back.vertices, m.vertices, rtol=0 if double else 1e-7)
        np.testing.assert_array_equal(back.triangles, m.triangles)
        np.testing.assert_array_equal(back.colors, m.colors)


def test_mesh_ply_ascii_quads(tmp_path):
    text = "\n".join([
        "ply", "format ascii 1.0", "comment square", "element vertex 4",
        "property float x", "property float y", "property float z",
        "element face 1", "property list uchar int vertex_indices", "end_header",
        "0 0 0", "1 0 0", "1 1 0", "0 1 0", "4 0 1 2 3", "",
    ])
    (tmp_path / "q.ply").write_text(text)
    m = io.read_mesh_ply(tmp_path / "q.ply")
    assert m.colors is None
    np.testing.assert_array_equal(m.triangles, [[0, 1, 2], [0, 2, 3]])
    assert m.area() == pytest.approx(1.0)


def test_mesh_ply_errors(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply")
    with pytest.raises(FormatError):
        io.read_mesh_ply(tmp_path / "x.ply")
    with pytest.raises(DataError, match="ghost.ply"):
        io.read_mesh_ply(tmp_path / "ghost.ply")


def test_cloud_roundtrip(tmp_path):
    c = SparsePointCloud(np.array([[0.1, 0.2, 0.3], [1, 2, 3.0]]), [{4, 1}, {0}])
    io.write_cloud_ply(tmp_path / "c.ply", c)
    text = (tmp_path / "c.ply").read_text()
    assert "format ascii 1.0" in text and "property list uint uint visibility" in text
    back = io.read_cloud_ply(tmp_path / "c.ply")
    np.testing.assert_array_equal(back.points, c.points)
    assert back.visibility == c.visibility


def test_descriptor_layout(tmp_path):
    d = AnalyticDescriptor(channels=4, seed=1).render(3, 2)
    io.write_descriptors(tmp_path / "d.desc", d)
    buf = (tmp_path / "d.desc").read_bytes()
    assert buf[:4] == b"DESC" and struct.unpack_from("<III", buf, 4) == (3, 2, 4)
    # row-major, channel-interleaved: second value is channel 1 of pixel (0, 0)
    assert np.frombuffer(buf, "<f4", 2, 16)[1] == np.float32(d.data[0, 0, 1])
    back = io.read_descriptors(tmp_path / "d.desc")
    np.testing.assert_allclose(back.data, d.data, atol=1e-7)
    (tmp_path / "d.desc").write_bytes(buf[:-1])
    with pytest.raises(FormatError):
        io.read_descriptors(tmp_path / "d.desc")


def test_queries_and_matches(tmp_path):
    (tmp_path / "q.txt").write_text("# u v\n1 2\n3.5 4.25\n")
    np.testing.assert_array_equal(io.read_queries(tmp_path / "q.txt"), [[1, 2], [3.5, 4.25]])
    (tmp_path / "e.txt").write_text("")
    assert io.read_queries(tmp_path / "e.txt").shape == (0, 2)
    (tmp_path / "b.txt").write_text("1 2\n3\n")
    with pytest.raises(FormatError) as exc:
        io.read_queries(tmp_path / "b.txt")
    assert exc.value.offset == 4
    io.write_matches(tmp_path / "m.txt", [[1, 2, 3, 4, 0.5]])
    assert (tmp_path / "m.txt").read_text() == "1.000000 2.000000 3.000000 4.000000 0.500000\n"


def test_tsdf_dump_x_fastest(tmp_path):
    vol = TsdfVolume.allocate([0.5, -1.0, 2.0], 0.25, (3, 2, 2))
    vol.tsdf[:] = np.arange(12).reshape(3, 2, 2) / 12
    vol.weight[:] = 2.0
    vol.color[1, 0, 0] = [10, 20, 30]
    io.write_tsdf(tmp_path / "v.tsdf", vol)
    buf = (tmp_path / "v.tsdf").read_bytes()
    assert buf[:4] == b"TSDF" and struct.unpack_from("<III", buf, 4) == (3, 2, 2)
    rec = np.frombuffer(buf, np.dtype([("t", "<f4"), ("w", "<f4"), ("c", "u1", 3)]), 12, 32)
    assert rec["t"][1] == np.float32(vol.tsdf[1, 0, 0])
    assert tuple(rec["c"][1]) == (10, 20, 30)
    back = io.read_tsdf(tmp_path / "v.tsdf")
    np.testing.assert_allclose(back.tsdf, vol.tsdf, atol=1e-7)
    np.testing.assert_array_equal(back.color, vol.color)
    np.testing.assert_allclose(back.origin, vol.origin)
