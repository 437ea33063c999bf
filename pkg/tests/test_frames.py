import numpy as np
import pytest

from hoidiff import rotations as R
from hoidiff.errors import ShapeError
from hoidiff.frames import (build_st_graph, features_from_reference, features_to_reference, from_reference,
                            graph_features, to_reference)
from hoidiff.synthetic import Scenario, generate_clip


def random_track(rng, n):
    q = rng.standard_normal((n, 4))
    q = R.canonicalize_quat(q / np.linalg.norm(q, axis=1, keepdims=True))
    return q, rng.uniform(-2, 2, (n, 3))


def random_frames(rng, n):
    q = rng.standard_normal((n, 4))
    return R.quat_to_matrix(q / np.linalg.norm(q, axis=1, keepdims=True))


def test_origin_anchor_is_identity():
    rng = np.random.default_rng(0)
    q, t = random_track(rng, 10)
    rq, rt = to_reference(q, t, np.zeros((10, 3)))
    np.testing.assert_array_equal(rq, q)
    np.testing.assert_array_equal(rt, t)


def test_rigid_offset_is_constant():
    rng = np.random.default_rng(1)
    anchor = np.cumsum(rng.standard_normal((30, 3)) * 0.05, axis=0)
    d = np.array([0.1, -0.2, 0.3])
    q, _ = random_track(rng, 30)
    _, rt = to_reference(q, anchor + d, anchor)
    np.testing.assert_allclose(rt, np.broadcast_to(d, rt.shape), atol=1e-12)


def test_zero_relative_rides_anchor():
    rng = np.random.default_rng(2)
    q, anchor = random_track(rng, 8)
    _, wt = from_reference(q, np.zeros((8, 3)), anchor)
    np.testing.assert_array_equal(wt, anchor)


@pytest.mark.parametrize("mode", ["translation_only", "bone_frame"])
def test_round_trip(mode):
    rng = np.random.default_rng(3)
    for _ in range(50):
        q, t = random_track(rng, 20)
        anchor = rng.uniform(-2, 2, (20, 3))
        fr = random_frames(rng, 20) if mode == "bone_frame" else None
        bq, bt = from_reference(*to_reference(q, t, anchor, mode, fr), anchor, mode, fr)
        err = np.minimum(np.abs(bq - q).max(1), np.abs(bq + q).max(1)).max()
        assert err < 1e-9
        np.testing.assert_allclose(bt, t, atol=1e-9)


def test_bone_frame_expresses_in_local_axes():
    # a bone frame rotated 90 deg about z maps world +x offsets to local -y
    fr = R.quat_to_matrix(R.axis_angle_to_quat(np.array([0, 0, 1.0]), np.pi / 2))[None]
    _, rt = to_reference(np.array([[1.0, 0, 0, 0]]), np.array([[1.0, 0, 0]]), np.zeros((1, 3)), "bone_frame", fr)
    np.testing.assert_allclose(rt, [[0, -1, 0]], atol=1e-15)


def test_errors():
    q, t = random_track(np.random.default_rng(0), 5)
    with pytest.raises(ShapeError):
        to_reference(q, t, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        to_reference(q, t, np.zeros((5, 3)), "bone_frame")
    with pytest.raises(ValueError):
        to_reference(q, t, np.zeros((5, 3)), "spin")


@pytest.mark.parametrize("use_frames", [False, True])
def test_feature_form_agrees_with_pose_form(use_frames):
    rng = np.random.default_rng(4)
    q, t = random_track(rng, 12)
    anchor = rng.uniform(-1, 1, (12, 3))
    fr = random_frames(rng, 12) if use_frames else None
    mode = "bone_frame" if use_frames else "translation_only"
    feats = np.concatenate([R.quat_to_rot6d(q), t], axis=1)
    rel = features_to_reference(feats, anchor, fr)
    rq, rt = to_reference(q, t, anchor, mode, fr)
    np.testing.assert_allclose(rel, np.concatenate([R.quat_to_rot6d(rq), rt], axis=1), atol=1e-12)
    np.testing.assert_allclose(features_from_reference(rel, anchor, fr), feats, atol=1e-12)


def test_graph_node_count_and_ground_node(body, carry_clip):
    g = build_st_graph(carry_clip.sequence, body)
    assert g.num_nodes == 17 and g.num_frames == carry_clip.sequence.past
    seq = carry_clip.sequence
    np.testing.assert_array_equal(g.features[:, 0, 6:], seq.obj_trans[:seq.past])


def test_static_body_nodes_are_shifted_copies():
    rng = np.random.default_rng(5)
    anchors = np.broadcast_to(rng.uniform(-1, 1, (1, 4, 3)), (10, 4, 3))
    world = np.concatenate([np.tile([1.0, 0, 0, 0, 1, 0], (10, 1)), rng.standard_normal((10, 3))], axis=1)
    g = graph_features(world, anchors)
    for j in range(4):
        offset = g[:, 0, 6:] - g[:, j + 1, 6:]
        np.testing.assert_allclose(offset, np.broadcast_to(anchors[0, j], offset.shape), atol=1e-12)


def test_attachment_node_constant_for_carry(body):
    for seed in range(5):
        clip = generate_clip(Scenario("carry", duration=35, seed=seed))
        g = build_st_graph(clip.sequence, body, frames="all")
        node = g.features[:, clip.attach_marker + 1]
        assert np.abs(node - node[0]).max() < 1e-6
        assert node.var(axis=0).max() < 1e-12


def test_world_ablation_repeats_ground():
    rng = np.random.default_rng(6)
    world = rng.standard_normal((5, 9))
    g = graph_features(world, rng.standard_normal((5, 3, 3)), relative=False)
    for j in range(4):
        np.testing.assert_array_equal(g[:, j], world)
