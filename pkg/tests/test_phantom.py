import numpy as np
import pytest

from cavityrecon.bvh import BVH
from cavityrecon.errors import DegenerateMesh, InvalidSpec
from cavityrecon.evaluation import point_to_mesh
from cavityrecon.geometry import CameraIntrinsics, RigidPose, look_rotation
from cavityrecon.mesh import TriangleMesh, check_watertight
from cavityrecon.phantom import (
    DEFAULT_INTRINSICS,
    PhantomSpec,
    RenderConfig,
    generate_phantom,
    generate_trajectory,
    render_depth,
    sample_sparse,
)

from oracles import ray_all

STRAIGHT = PhantomSpec(length=60.0, radius_profile=(10.0,), bend=0.0, bump_amplitude=0.0, axial_segments=20, angular_segments=64)


@pytest.fixture(scope="module")
def default_mesh():
    return generate_phantom(PhantomSpec())


def test_cylinder_watertight_and_volume():
    mesh = generate_phantom(STRAIGHT)
    assert check_watertight(mesh).is_watertight
    n, r, L = 64, 10.0, 60.0
    prism = 0.5 * n * r * r * np.sin(2 * np.pi / n) * L
    # triangles face the lumen, so the enclosed volume comes out negative
    assert mesh.signed_volume() == pytest.approx(-prism, rel=1e-12)
    assert abs(mesh.signed_volume()) == pytest.approx(np.pi * r * r * L, rel=0.002)


def test_default_phantom_watertight(default_mesh):
    rep = check_watertight(default_mesh)
    assert rep.is_watertight and rep.connected_component_count == 1
    assert len(default_mesh.triangles) == 30912


def test_deterministic(default_mesh):
    again = generate_phantom(PhantomSpec())
    assert again.vertices.tobytes() == default_mesh.vertices.tobytes()
    assert again.triangles.tobytes() == default_mesh.triangles.tobytes()
    other = generate_phantom(PhantomSpec(seed=1))
    assert other.vertices.tobytes() != default_mesh.vertices.tobytes()


def test_rejects_bad_phantom_parameters():
    for bad in (dict(length=-1), dict(radius_profile=(3.0, 0.0)), dict(bump_amplitude=1.0), dict(axial_segments=4)):
        with pytest.raises(InvalidSpec):
            generate_phantom(PhantomSpec(**bad))
    with pytest.raises(InvalidSpec):
        generate_trajectory(PhantomSpec(), 1)


def test_two_pose_trajectory_on_axis():
    poses = generate_trajectory(STRAIGHT, 2)
    assert len(poses) == 2
    for p in poses:
        assert np.hypot(*p.center[:2]) < 1e-12
        assert abs(abs(p.optical_axis[2]) - 1.0) < 1e-12
    assert poses[0].optical_axis @ poses[1].optical_axis == pytest.approx(-1.0)


def test_trajectory_keeps_clear_of_wall(default_mesh):
    spec = PhantomSpec()
    poses = generate_trajectory(spec, 60)
    d = point_to_mesh(np.array([p.center for p in poses]), default_mesh).per_point
    s = np.array([p.center[2] for p in poses])  # centerline is parametrized by z
    assert (d >= 0.5 * spec.base_radius(s)).all()
    again = generate_trajectory(spec, 60)
    assert all(a.allclose(b, atol=0) for a, b in zip(poses, again))


def test_depth_on_axis_equals_radius():
    k = CameraIntrinsics(50.0, 50.0, 20.0, 15.0, 41, 31)
    mesh = generate_phantom(STRAIGHT)
    pose = RigidPose.from_matrix(look_rotation([1, 0, 0], [0, 1, 0]), [0, 0, 30.0])
    f = render_depth(mesh, pose, k, RenderConfig(noise_sigma_rel=0.0))
    assert f.mean[15, 20] == pytest.approx(10.0, abs=1e-12)


def test_render_matches_brute_force():
    spec = PhantomSpec(axial_segments=16, angular_segments=16)
    mesh = generate_phantom(spec)
    assert 500 <= len(mesh.triangles) <= 550
    k = CameraIntrinsics(20.0, 20.0, 19.5, 15.5, 40, 32)
    pose = generate_trajectory(spec, 6)[1]
    f = render_depth(mesh, pose, k, RenderConfig(noise_sigma_rel=0.0))
    corners = mesh.corners
    want = np.zeros((32, 40))
    for v in range(32):
        for u in range(40):
            d = pose.R @ np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
            t = ray_all(pose.center, d, corners).min()
            want[v, u] = t if np.isfinite(t) else 0.0
    assert np.abs(f.mean - want).max() < 1e-9
    assert (want > 0).all()


def test_render_determinism_and_noise(default_mesh):
    bvh = BVH(default_mesh)
    pose = generate_trajectory(PhantomSpec(), 10)[2]
    k = DEFAULT_INTRINSICS
    a = render_depth(default_mesh, pose, k, RenderConfig(0.0), bvh=bvh)
    b = render_depth(default_mesh, pose, k, RenderConfig(0.0), bvh=bvh)
    assert a.mean.tobytes() == b.mean.tobytes()
    n1 = render_depth(default_mesh, pose, k, RenderConfig(0.01, seed=4), frame_id=2, bvh=bvh)
    n2 = render_depth(default_mesh, pose, k, RenderConfig(0.01, seed=4), frame_id=2, bvh=bvh)
    n3 = render_depth(default_mesh, pose, k, RenderConfig(0.01, seed=4), frame_id=3, bvh=bvh)
    assert n1.mean.tobytes() == n2.mean.tobytes() != n3.mean.tobytes()
    rel = (n1.mean[a.valid] - a.mean[a.valid]) / a.mean[a.valid]
    assert rel.std() == pytest.approx(0.01, rel=0.05)
    np.testing.assert_allclose(n1.stddev[n1.valid], np.maximum(0.01 * n1.mean[n1.valid], 1e-3))

    # zero-noise depth unprojects onto the surface
    d = point_to_mesh(a.backproject()[::97], default_mesh, bvh).max
    assert d < 1e-6 * default_mesh.extent()


def test_render_rejects_degenerate():
    flat = TriangleMesh(np.zeros((3, 3)), [[0, 1, 2]])
    with pytest.raises(DegenerateMesh):
        render_depth(flat, RigidPose.identity(), DEFAULT_INTRINSICS, RenderConfig())


@pytest.fixture(scope="module")
def sparse_setup(default_mesh):
    spec = PhantomSpec()
    poses = generate_trajectory(spec, 12)
    return poses, sample_sparse(default_mesh, poses, DEFAULT_INTRINSICS, 400, seed=7)


def test_sparse_points_on_surface_and_projectable(default_mesh, sparse_setup):
    poses, cloud = sparse_setup
    assert len(cloud) == 400
    assert point_to_mesh(cloud.points, default_mesh).max < 1e-9
    k = DEFAULT_INTRINSICS
    for p, vis in zip(cloud.points, cloud.visibility):
        assert len(vis) >= 2
        for fid in vis:
            c = poses[fid].world_to_camera(p[None])[0]
            assert c[2] > 0
            u, v = k.fx * c[0] / c[2] + k.cx, k.fy * c[1] / c[2] + k.cy
            assert -0.5 <= u < k.width - 0.5 and -0.5 <= v < k.height - 0.5


def test_sparse_deterministic(default_mesh, sparse_setup):
    poses, cloud = sparse_setup
    again = sample_sparse(default_mesh, poses, DEFAULT_INTRINSICS, 400, seed=7)
    assert again.points.tobytes() == cloud.points.tobytes()
    assert again.visibility == cloud.visibility


def test_bent_tube_occluded_side_never_sampled():
    spec = PhantomSpec(length=80.0, radius_profile=(8.0,), bend=30.0, bump_amplitude=0.0,
                       axial_segments=40, angular_segments=24)
    mesh = generate_phantom(spec)
    k = CameraIntrinsics(30.0, 30.0, 31.5, 23.5, 64, 48)
    # cameras in the straight first third, looking down the tube
    poses = [RigidPose.from_matrix(look_rotation(spec.frame(s)[0], [0, 1, 0]), spec.centerline(s)) for s in (5.0, 12.0, 20.0)]
    cloud = sample_sparse(mesh, poses, k, 150, seed=2, min_views=1)
    corners = mesh.corners

    def sees(pose, p):
        c = pose.world_to_camera(p[None])[0]
        if c[2] <= 0:
            return False
        u, v = np.floor(k.fx * c[0] / c[2] + k.cx + 0.5), np.floor(k.fy * c[1] / c[2] + k.cy + 0.5)
        if not (0 <= u < k.width and 0 <= v < k.height):
            return False
        t = ray_all(pose.center, p - pose.center, corners)
        return not (t < 1.0 - 1e-6).any()

    for p, vis in zip(cloud.points, cloud.visibility):
        for fid in vis:
            assert sees(poses[fid], p)
    # the outer wall past the bend really is hidden from these cameras
    far = mesh.sample_surface(300, np.random.default_rng(0))[0]
    hidden = [p for p in far if p[2] > 60 and not any(sees(q, p) for q in poses)]
    assert len(hidden) > 10
    assert len(cloud) == 150
