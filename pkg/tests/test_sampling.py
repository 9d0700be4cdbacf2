import numpy as np
import pytest
import torch

from dualflow.errors import ContractError, RuntimeAbort
from dualflow.geometry import CameraIntrinsics, CameraPath, CameraPose, DepthMap
from dualflow.model import DualStreamDiT, ModelConfig
from dualflow.sampling import (
    Stroke,
    expand_strokes,
    integrate,
    prepare_user_condition,
    sample,
    sample_bundles,
    select_tracks,
)
from dualflow.tracks import ACTIVE, PASSIVE
from dualflow.world import make_sample, random_scene_spec

SMALL = ModelConfig(hidden=16, heads=2, blocks=1, d_trk=8, trk_channels=8)
INTR = CameraIntrinsics.centered(32, 32, 32.0)


def oracle(z0_can, z0_tar, eps_can, eps_tar):
    return lambda zc, zt, t: (eps_can - z0_can, eps_tar - z0_tar)


def noise(seed):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(3, 7, generator=g, dtype=torch.float64) for _ in range(4)]


def test_oracle_single_step_lands_on_data():
    z0c, z0t, ec, et = noise(0)
    zc, zt = integrate(oracle(z0c, z0t, ec, et), ec, et, steps=1)
    assert (zc - z0c).abs().max() <= 1e-12 and (zt - z0t).abs().max() <= 1e-12


def test_oracle_step_count_invariance():
    z0c, z0t, ec, et = noise(1)
    a = integrate(oracle(z0c, z0t, ec, et), ec, et, steps=20)
    b = integrate(oracle(z0c, z0t, ec, et), ec, et, steps=40)
    assert (a[0] - b[0]).abs().max() <= 1e-6 and (a[1] - b[1]).abs().max() <= 1e-6


def test_integrate_rejects_zero_steps_and_aborts_on_nan():
    z = torch.zeros(2)
    with pytest.raises(ContractError):
        integrate(lambda a, b, t: (a, b), z, z, 0)
    with pytest.raises(RuntimeAbort) as info:
        integrate(lambda a, b, t: (a + np.inf, b), z, z, 5)
    assert info.value.state["step"] == 1


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    m = DualStreamDiT(SMALL)
    with torch.no_grad():
        for p in m.parameters():
            p.add_(0.05 * torch.randn_like(p))
    return m


@pytest.fixture(scope="module")
def world_sample():
    return make_sample(random_scene_spec(4, script="push", camera="pan"))


def test_sample_shapes_determinism_and_no_mutation(model, world_sample):
    before = {k: v.clone() for k, v in model.state_dict().items()}
    can, tar = sample_bundles(world_sample, SMALL, "active", seed=0)
    a = sample(model, can, tar, steps=3, seed=5)
    b = sample(model, can, tar, steps=3, seed=5)
    c = sample(model, can, tar, steps=3, seed=6)
    for clip in a:
        assert clip.shape == (8, 32, 32, 3) and np.isfinite(clip).all()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_sample_bundle_contracts(model, world_sample):
    can, tar = sample_bundles(world_sample, SMALL, "active")
    with pytest.raises(ContractError):
        sample(model, tar, tar, steps=1)
    with pytest.raises(ContractError):
        sample(model, can, can.__class__(tar.first_frame, tar.path, tar.depth0, can.trajectory), steps=1)


def test_sample_bundles_selects_roles(world_sample):
    can, tar = sample_bundles(world_sample, SMALL, "passive", max_tracks=10_000)
    assert (can.tracks.role == PASSIVE).all()
    assert len(can.tracks) == (world_sample.tracks.role == PASSIVE).sum()
    assert tar.trajectory is None and tar.path is world_sample.path
    assert len(select_tracks(world_sample.tracks, "none")) == 0


def _ids_with_square(size=10, at=(5, 5)):
    ids = np.full((32, 32), -1, dtype=np.int16)
    ids[at[1]:at[1] + size, at[0]:at[0] + size] = 0
    return ids


def test_stroke_replicated_over_mask():
    ids = _ids_with_square()
    disp = np.cumsum(np.full((8, 2), 0.5), axis=0) - 0.5
    tracks = expand_strokes([Stroke((7.5, 7.5), disp)], ids, 8, (32, 32))
    assert len(tracks) == 100
    delta = tracks.positions - tracks.positions[:, :1]
    assert (delta == disp[None]).all()
    assert (tracks.role == ACTIVE).all()


def test_empty_strokes_give_zero_grid():
    depth = DepthMap.dense(np.full((32, 32), 5.0))
    can, tar = prepare_user_condition([], depth, _ids_with_square(), CameraPath.identity(8, INTR),
                                      np.zeros((32, 32, 3)), SMALL)
    assert not can.trajectory.occupancy.any() and not can.trajectory.embedding.any()
    assert tar.trajectory is None


def test_stroke_outside_image_rejected_with_index():
    good = Stroke((3.0, 3.0), np.zeros((8, 2)))
    bad = Stroke((40.0, 3.0), np.zeros((8, 2)))
    with pytest.raises(ContractError, match="stroke 1"):
        expand_strokes([good, bad], _ids_with_square(), 8, (32, 32))


def test_overlapping_strokes_mask_deeper_object():
    ids = np.full((32, 32), -1, dtype=np.int16)
    ids[10:14, 4:8] = 0
    ids[10:14, 20:24] = 1
    values = np.full((32, 32), 8.0)
    values[ids == 0] = 3.0
    values[ids == 1] = 4.0  # object 1 is deeper
    depth = DepthMap.dense(values)
    steps = np.arange(8)[:, None] * np.array([[2.0, 0.0]])
    strokes = [Stroke((5.5, 11.5), steps), Stroke((21.5, 11.5), -steps, role="passive")]
    can, _ = prepare_user_condition(strokes, depth, ids, CameraPath.identity(8, INTR), np.zeros((32, 32, 3)), SMALL)
    tr = can.tracks
    # at frame 4 the squares overlap on columns 12..15
    t = 4
    deep = tr.object_id == 1
    cells_near = {tuple(np.floor(p).astype(int)) for p in tr.positions[~deep, t]}
    collided = np.array([tuple(np.floor(p).astype(int)) in cells_near for p in tr.positions[deep, t]])
    assert collided.any()
    assert not tr.visible[deep, t][collided].any()
    assert tr.visible[~deep, t].all()


def test_user_condition_camera_path_goes_to_target():
    depth = DepthMap.dense(np.full((32, 32), 5.0))
    path = CameraPath.from_poses([CameraPose(np.eye(3), np.array([0.01 * i, 0, 0])) for i in range(8)], INTR)
    can, tar = prepare_user_condition([Stroke((3.0, 3.0), np.zeros((8, 2)))], depth, _ids_with_square(), path,
                                      np.zeros((32, 32, 3)), SMALL)
    assert can.path.is_identity() and tar.path is path
