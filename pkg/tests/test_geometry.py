import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dualflow.errors import BehindCameraError, EmptyWarpError, InvalidDepthError
from dualflow.geometry import (
    CameraIntrinsics,
    CameraPath,
    CameraPose,
    DepthMap,
    canonicalize_track,
    occlusion_mask,
    pixel_centers,
    project,
    sample_depth,
    unproject,
    warp_first_frame,
)
from dualflow.tracks import TrackSet

INTR = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def random_pose(rng, max_angle=0.2, max_shift=0.5):
    rot = Rotation.from_rotvec(rng.uniform(-max_angle, max_angle, 3)).as_matrix()
    return CameraPose(rot, rng.uniform(-max_shift, max_shift, 3))


def test_unproject_principal_ray():
    np.testing.assert_array_equal(unproject(INTR, (INTR.cx, INTR.cy), 2.0), [0.0, 0.0, 2.0])


def test_unproject_unit_tangent():
    np.testing.assert_allclose(unproject(INTR, (INTR.cx + INTR.fx, INTR.cy), 1.0), [1.0, 0.0, 1.0], atol=1e-15)


def test_project_formula():
    np.testing.assert_array_equal(project(INTR, (0.0, 0.0, 5.0)), [50.0, 50.0])
    np.testing.assert_array_equal(project(INTR, (1.0, 0.0, 1.0)), [150.0, 50.0])


@pytest.mark.parametrize("depth", [0.0, -1.0, np.nan, np.inf])
def test_unproject_rejects_bad_depth(depth):
    with pytest.raises(InvalidDepthError):
        unproject(INTR, (10.0, 10.0), depth)


def test_project_rejects_points_behind():
    with pytest.raises(BehindCameraError):
        project(INTR, (0.0, 0.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0, 99.999), v=st.floats(0, 99.999), d=st.floats(1e-3, 1e3))
def test_project_unproject_round_trip(u, v, d):
    back = project(INTR, unproject(INTR, (u, v), d))
    assert np.abs(back - [u, v]).max() <= 1e-9


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-5, 5), y=st.floats(-5, 5), z=st.floats(0.1, 50), k=st.floats(0.01, 100))
def test_projection_is_scale_invariant(x, y, z, k):
    p = np.array([x, y, z])
    assert np.abs(project(INTR, p) - project(INTR, k * p)).max() <= 1e-9


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=1.0, cx=1.0, cy=1.0, width=4, height=4)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1.0, fy=1.0, cx=4.0, cy=1.0, width=4, height=4)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        CameraPose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_pose_inverse_and_compose():
    rng = np.random.default_rng(0)
    a, b = random_pose(rng), random_pose(rng)
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)
    np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)
    np.testing.assert_allclose(a.apply(a.center), 0.0, atol=1e-12)


def test_canonicalize_identity_path_is_identity():
    rng = np.random.default_rng(1)
    track = rng.uniform(0, 100, size=(8, 2))
    depths = rng.uniform(1, 10, size=8)
    out, vis = canonicalize_track(track, depths, CameraPath.identity(8, INTR), INTR)
    assert np.abs(out - track).max() <= 1e-9
    assert vis.all()


def test_canonicalize_static_point_is_constant():
    rng = np.random.default_rng(2)
    for _ in range(20):
        poses = [CameraPose.identity()] + [random_pose(rng) for _ in range(7)]
        path = CameraPath.from_poses(poses, INTR)
        world = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(4, 8)])
        cams = np.array([p.apply(world) for p in poses])
        track = project(INTR, cams)
        out, vis = canonicalize_track(track, cams[:, 2], path, INTR)
        assert vis.all()
        assert np.abs(out - track[0]).max() <= 1e-6


def test_canonicalize_pure_zoom_closed_form():
    # a static point at depth 4 seen after the camera moves 2 units forward
    world = np.array([0.3, -0.2, 4.0])
    poses = [CameraPose.identity(), CameraPose(np.eye(3), np.array([0.0, 0.0, -2.0]))]
    path = CameraPath.from_poses(poses, INTR)
    cams = np.array([p.apply(world) for p in poses])
    assert cams[1, 2] == 2.0
    track = project(INTR, cams)
    out, _ = canonicalize_track(track, cams[:, 2], path, INTR)
    assert np.abs(out[1] - track[0]).max() <= 1e-6


def test_canonicalize_marks_points_behind_frame0_invisible():
    poses = [CameraPose.identity(), CameraPose(np.eye(3), np.array([0.0, 0.0, 5.0]))]
    path = CameraPath.from_poses(poses, INTR)
    track = np.array([[50.0, 50.0], [50.0, 50.0]])
    out, vis = canonicalize_track(track, np.array([1.0, 2.0]), path, INTR)
    assert vis.tolist() == [True, False]
    np.testing.assert_array_equal(out[1], track[1])


def test_canonicalize_passes_invisible_steps_through():
    rng = np.random.default_rng(3)
    path = CameraPath.from_poses([CameraPose.identity(), random_pose(rng), random_pose(rng)], INTR)
    track = np.array([[10.0, 10.0], [-5.0, 200.0], [30.0, 40.0]])
    out, vis = canonicalize_track(track, np.array([3.0, np.nan, 3.0]), path, INTR,
                                  visible=np.array([True, False, True]))
    np.testing.assert_array_equal(out[1], track[1])
    assert not vis[1]


def test_sample_depth_bilinear_on_ramp():
    values = np.add.outer(np.arange(6.0), 10 * np.arange(5.0)) + 1.0  # rows x cols
    depth = DepthMap.dense(values)
    # pixel centers hit grid values exactly; midpoints interpolate
    assert sample_depth(depth, np.array([[2.5, 3.5]])) == values[3, 2]
    assert sample_depth(depth, np.array([[3.0, 3.5]]))[0] == pytest.approx((values[3, 2] + values[3, 3]) / 2)


def test_warp_identity_pose():
    rng = np.random.default_rng(4)
    img = rng.random((12, 16, 3))
    intr = CameraIntrinsics.centered(16, 12, 16.0)
    depth = DepthMap.dense(rng.uniform(2, 5, (12, 16)))
    warped, valid = warp_first_frame(img, depth, intr, CameraPose.identity())
    np.testing.assert_array_equal(warped, img)
    assert valid.all()


def test_warp_plane_shift():
    # fronto-parallel plane at depth 4; a lateral move of tx shifts content by fx*tx/z
    intr = CameraIntrinsics.centered(40, 20, 40.0)
    z, tx = 4.0, 0.3
    img = np.zeros((20, 40, 3))
    img[:, :, 0] = np.arange(40)[None, :] / 40
    depth = DepthMap.dense(np.full((20, 40), z))
    warped, valid = warp_first_frame(img, depth, intr, CameraPose(np.eye(3), np.array([tx, 0.0, 0.0])))
    shift = intr.fx * tx / z  # 3 px
    cols = np.flatnonzero(valid[10])
    expected = img[10, (cols - round(shift)).astype(int), 0]
    assert np.abs(warped[10, cols, 0] - expected).max() <= 1.0 / 40 + 1e-12
    assert not valid[:, : int(shift)].any()


def test_warp_everything_behind_camera():
    intr = CameraIntrinsics.centered(8, 8, 8.0)
    depth = DepthMap.dense(np.full((8, 8), 2.0))
    with pytest.raises(EmptyWarpError):
        warp_first_frame(np.ones((8, 8, 3)), depth, intr, CameraPose(np.eye(3), np.array([0.0, 0.0, -5.0])))


def test_warp_invalid_depth():
    intr = CameraIntrinsics.centered(8, 8, 8.0)
    depth = DepthMap(np.ones((8, 8)), np.zeros((8, 8), bool))
    with pytest.raises(EmptyWarpError):
        warp_first_frame(np.ones((8, 8, 3)), depth, intr, CameraPose.identity())


def test_warp_zbuffer_nearest_wins():
    intr = CameraIntrinsics.centered(8, 8, 8.0)
    img = np.zeros((8, 8, 3))
    img[:, :4] = 1.0
    values = np.full((8, 8), 4.0)
    values[:, :4] = 2.0  # left half nearer
    # moving right makes the near half slide further and overlap the far half
    warped, valid = warp_first_frame(img, DepthMap.dense(values), intr,
                                     CameraPose(np.eye(3), np.array([0.5, 0.0, 0.0])))
    # near content shifts 2 px, far content 1 px: columns 2..5 of near land on far columns
    assert (warped[:, 5] == 1.0).all()


def _two_tracks(pos_a, pos_b, size=(10, 10)):
    pos = np.stack([pos_a, pos_b]).astype(float)
    return TrackSet(pos, np.ones(pos.shape[:2], bool), np.array([0, 1]), np.array([0, 1]), size)


def test_occlusion_disjoint_tracks_stay_visible():
    a = np.array([[1.5, 1.5]] * 5)
    b = np.array([[7.5, 7.5]] * 5)
    assert occlusion_mask(_two_tracks(a, b), DepthMap.dense(np.ones((10, 10)))).all()


def test_occlusion_masks_deeper_track_at_collision_only():
    a = np.array([[1.5, 5.5], [2.5, 5.5], [3.5, 5.5], [5.5, 5.5], [6.5, 5.5]])
    b = np.array([[8.5, 5.5], [7.5, 5.5], [6.5, 5.5], [5.5, 5.5], [4.5, 5.5]])
    values = np.ones((10, 10))
    values[:, 8] = 2.0  # b starts on the deeper column
    vis = occlusion_mask(_two_tracks(a, b), DepthMap.dense(values))
    assert vis[0].all()
    assert vis[1].tolist() == [True, True, True, False, True]


def test_occlusion_equal_depth_lower_id_wins_and_order_invariant():
    a = np.array([[2.5, 2.5], [4.5, 4.5]])
    b = np.array([[6.5, 6.5], [4.5, 4.5]])
    depth = DepthMap.dense(np.ones((10, 10)))
    vis = occlusion_mask(_two_tracks(a, b), depth)
    assert vis[:, 1].tolist() == [True, False]
    swapped = TrackSet(np.stack([b, a]), np.ones((2, 2), bool), np.array([1, 0]), np.array([1, 0]), (10, 10))
    np.testing.assert_array_equal(occlusion_mask(swapped, depth)[::-1], vis)


def test_pixel_centers():
    pc = pixel_centers(2, 3)
    assert pc.shape == (2, 3, 2)
    np.testing.assert_array_equal(pc[1, 2], [2.5, 1.5])
