import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from hoidiff import rotations as R
from hoidiff.body import (BodyProxy, MarkerSet, Skeleton, body_sdf, bone_frames, default_skeleton,
                          forward_kinematics, marker_positions)
from hoidiff.errors import ShapeError


def random_local_rotations(rng, n, scale=0.6):
    axis = rng.standard_normal((n, 3))
    return R.axis_angle_to_quat(axis / np.linalg.norm(axis, axis=1, keepdims=True), rng.uniform(-scale, scale, n))


def test_identity_rotations_give_cumulative_offsets():
    sk = default_skeleton()
    pos = forward_kinematics(sk, R.quat_identity((sk.num_joints,)))
    expect = np.zeros((sk.num_joints, 3))
    for j in range(sk.num_joints):
        p = sk.parents[j]
        expect[j] = sk.rest_offsets[j] + (expect[p] if p >= 0 else 0.0)
    np.testing.assert_allclose(pos, expect, atol=1e-15)


def test_two_joint_chain_quarter_turn():
    sk = Skeleton([-1, 0], [[0, 0, 0], [0, 1.0, 0]], [0.05])
    q = np.stack([R.axis_angle_to_quat(np.array([0, 0, 1.0]), np.pi / 2), R.quat_identity()])
    np.testing.assert_allclose(forward_kinematics(sk, q)[1], [-1, 0, 0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_fk_preserves_bone_lengths(seed):
    sk = default_skeleton()
    rng = np.random.default_rng(seed)
    pos = forward_kinematics(sk, random_local_rotations(rng, sk.num_joints, 3.0), rng.standard_normal(3))
    lengths = np.linalg.norm(pos[sk.bone_child] - pos[sk.bone_parent], axis=1)
    np.testing.assert_allclose(lengths, sk.bone_lengths(), atol=1e-9)


@pytest.mark.parametrize("kw", [
    dict(parents=[0, 0], rest_offsets=[[0, 0, 0], [0, 1, 0]], capsule_radii=[0.1]),
    dict(parents=[-1, 0], rest_offsets=[[0, 0, 0], [0, 1, 0]], capsule_radii=[0.0]),
    dict(parents=[-1, 0], rest_offsets=[[0, 0, 0], [0, 0, 0]], capsule_radii=[0.1]),
    dict(parents=[-1, 2, 0], rest_offsets=[[0, 0, 0], [0, 1, 0], [1, 0, 0]], capsule_radii=[0.1, 0.1]),
])
def test_invalid_skeletons(kw):
    with pytest.raises(ValueError):
        Skeleton(**kw)


def test_radii_count_must_match_bones():
    with pytest.raises(ShapeError):
        Skeleton([-1, 0], [[0, 0, 0], [0, 1, 0]], [0.1, 0.1])


def _pose(seed=0, frames=None):
    sk = default_skeleton()
    rng = np.random.default_rng(seed)
    n = (frames,) if frames else ()
    q = random_local_rotations(rng, int(np.prod(n or (1,))) * sk.num_joints).reshape(n + (sk.num_joints, 4))
    return sk, forward_kinematics(sk, q, rng.standard_normal(n + (3,)))


def test_marker_at_bary_zero_and_half():
    sk, joints = _pose(1)
    ms = MarkerSet([4, 4], [0.0, 0.5], np.zeros((2, 3)))
    pos = marker_positions(joints, sk, ms)
    np.testing.assert_allclose(pos[0], joints[sk.parents[5]], atol=1e-15)
    np.testing.assert_allclose(pos[1], 0.5 * (joints[sk.parents[5]] + joints[5]), atol=1e-15)


def test_markers_lie_on_capsule_surface():
    body = BodyProxy.default()
    _, joints = _pose(2, frames=6)
    mk = body.marker_positions(joints)
    sk = body.skeleton
    from hoidiff.body import capsule_distances
    d = capsule_distances(joints, sk, mk)  # (F, M, B)
    own = d[:, np.arange(len(body.markers)), body.markers.bones]
    np.testing.assert_allclose(own, 0.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_markers_equivariant_under_rigid_motion(seed):
    body = BodyProxy.default()
    _, joints = _pose(seed % 1000)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    t = rng.uniform(-3, 3, 3)
    moved = R.quat_apply(q, joints) + t
    np.testing.assert_allclose(body.marker_positions(moved), R.quat_apply(q, body.marker_positions(joints)) + t,
                               atol=1e-9)


def test_bone_frames_are_rotations():
    sk, joints = _pose(4, frames=5)
    fr = bone_frames(joints, sk)
    eye = np.einsum("...ji,...jk->...ik", fr, fr)
    np.testing.assert_allclose(eye, np.broadcast_to(np.eye(3), eye.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(fr), 1.0, atol=1e-12)


def _single_capsule(radius):
    return Skeleton([-1, 0], [[0, 0, 0], [0, 0, 1.0]], [radius]), np.array([[0, 0, 0], [0, 0, 1.0]])


def test_sdf_on_axis_is_minus_radius():
    sk, joints = _single_capsule(0.05)
    assert body_sdf(joints, sk, np.array([0, 0, 0.4])) == pytest.approx(-0.05, abs=1e-15)


def test_sdf_far_query_lower_bound():
    sk, joints = _pose(0)
    far = joints.max(0) + np.array([1.0 + sk.capsule_radii.max(), 0, 0])
    far[1:] = joints.mean(0)[1:]
    assert body_sdf(joints, sk, far) >= 0.9


def _capsule_surface(a, b, r, h):
    """Dense surface samples of one capsule at spacing about h."""
    ax = b - a
    L = np.linalg.norm(ax)
    u = ax / L
    v = np.cross(u, [1.0, 0, 0] if abs(u[0]) < 0.9 else [0, 1.0, 0])
    v /= np.linalg.norm(v)
    w = np.cross(u, v)
    nphi = int(np.ceil(2 * np.pi * r / h))
    phi = np.linspace(0, 2 * np.pi, nphi, endpoint=False)
    s = np.linspace(0, L, int(np.ceil(L / h)) + 1)
    ring = np.cos(phi)[:, None] * v + np.sin(phi)[:, None] * w
    side = a + s[:, None, None] * u + r * ring[None]
    nth = int(np.ceil(np.pi / 2 * r / h)) + 1
    caps = []
    for end, sign in ((a, -1.0), (b, 1.0)):
        for th in np.linspace(0, np.pi / 2, nth):
            k = max(1, int(np.ceil(2 * np.pi * r * np.cos(th) / h)))
            ph = np.linspace(0, 2 * np.pi, k, endpoint=False)
            rg = np.cos(ph)[:, None] * v + np.sin(ph)[:, None] * w
            caps.append(end + r * (np.cos(th) * rg + sign * np.sin(th) * u))
    return np.concatenate([side.reshape(-1, 3)] + caps)


def test_sdf_matches_sampled_surface_distance():
    # bent three-joint chain; surface samples inside another capsule are dropped
    sk = Skeleton([-1, 0, 1], [[0, 0, 0], [0, 0, 0.3], [0.25, 0, 0.1]], [0.05, 0.04])
    joints = forward_kinematics(sk, R.quat_identity((3,)))
    h = 1.5e-3
    surf = []
    for b in range(sk.num_bones):
        pts = _capsule_surface(joints[sk.parents[b + 1]], joints[b + 1], sk.capsule_radii[b], h)
        keep = np.ones(len(pts), dtype=bool)
        for c in range(sk.num_bones):
            if c != b:
                a2, b2 = joints[sk.parents[c + 1]], joints[c + 1]
                ab = b2 - a2
                t = np.clip((pts - a2) @ ab / (ab @ ab), 0, 1)
                keep &= np.linalg.norm(pts - (a2 + t[:, None] * ab), axis=1) >= sk.capsule_radii[c]
        surf.append(pts[keep])
    tree = cKDTree(np.concatenate(surf))
    rng = np.random.default_rng(0)
    lo, hi = joints.min(0) - 0.15, joints.max(0) + 0.15
    q = rng.uniform(lo, hi, (10000, 3))
    sdf = body_sdf(joints, sk, q)
    dist, _ = tree.query(q)
    # sign: explicit inside test against each capsule
    inside = np.zeros(len(q), dtype=bool)
    for c in range(sk.num_bones):
        a2, b2 = joints[sk.parents[c + 1]], joints[c + 1]
        ab = b2 - a2
        t = np.clip((q - a2) @ ab / (ab @ ab), 0, 1)
        inside |= np.linalg.norm(q - (a2 + t[:, None] * ab), axis=1) < sk.capsule_radii[c]
    assert np.array_equal(sdf < 0, inside)
    # magnitude: outside the union the min-combination is exact
    out = ~inside
    assert out.sum() > 5000
    assert np.abs(sdf[out] - dist[out]).max() < 2e-3


def test_body_proxy_dict_round_trip():
    body = BodyProxy.default()
    again = BodyProxy.from_dict(body.to_dict())
    _, joints = _pose(9)
    np.testing.assert_array_equal(again.marker_positions(joints), body.marker_positions(joints))
    assert body.num_contact_points("marker") == 16
    assert body.num_contact_points("joint") == 21
