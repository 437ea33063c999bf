"""Independent brute-force oracles written as plain Python loops.

Arithmetic is ordered like the vectorised code (left-to-right sums of
three products), so results can be compared for exact equality.
"""
import math

import numpy as np

from hoidiff.body import forward_kinematics
from hoidiff import rotations as R
from hoidiff.core import HoiSequence, ObjectShape


def min_distance_loop(query, cloud):
    """query (Q, 3), cloud (N, 3) -> list of Q nearest distances."""
    out = []
    for q in query.tolist():
        best = math.inf
        for p in cloud.tolist():
            d0, d1, d2 = q[0] - p[0], q[1] - p[1], q[2] - p[2]
            sq = d0 * d0 + d1 * d1 + d2 * d2
            if sq < best:
                best = sq
        out.append(math.sqrt(best))
    return out


def segment_distance_loop(p, a, b):
    ab = (b[0] - a[0], b[1] - a[1], b[2] - a[2])
    denom = max(ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2], 1e-300)
    ap = (p[0] - a[0], p[1] - a[1], p[2] - a[2])
    t = (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / denom
    t = min(max(t, 0.0), 1.0)
    c = (a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2])
    d = (p[0] - c[0], p[1] - c[1], p[2] - c[2])
    return math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])


def sdf_loop(p, joints, skeleton):
    best = math.inf
    for b in range(skeleton.num_bones):
        a = joints[skeleton.parents[b + 1]].tolist()
        e = joints[b + 1].tolist()
        best = min(best, segment_distance_loop(p, a, e) - float(skeleton.capsule_radii[b]))
    return best


def penetration_loop(joints, skeleton, cloud):
    total = 0.0
    for p in cloud.tolist():
        total += -min(sdf_loop(p, joints, skeleton), 0.0)
    return total


def inside_count_loop(joints, skeleton, cloud):
    return sum(1 for p in cloud.tolist() if sdf_loop(p, joints, skeleton) < 0.0)


def random_scene(seed, body, frames=2, points=256, spread=0.35):
    """Random posed body with an object cloud scattered around a random joint.

    The object pose is the identity, so the posed cloud equals its canonical
    points exactly and the oracles see the same coordinates.
    """
    rng = np.random.default_rng(seed)
    sk = body.skeleton
    axis = rng.standard_normal((frames, sk.num_joints, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    q = R.axis_angle_to_quat(axis, rng.uniform(-0.5, 0.5, (frames, sk.num_joints)))
    joints = forward_kinematics(sk, q, rng.uniform(-1, 1, (frames, 3)))
    centre = joints[0, rng.integers(sk.num_joints)]
    pts = centre + rng.uniform(-spread, spread, (points, 3))
    shape = ObjectShape(pts, np.arange(min(12, points)))
    n = frames + 1
    seq = HoiSequence(np.concatenate([joints[:1], joints]), np.tile([1.0, 0, 0, 0], (n, 1)), np.zeros((n, 3)),
                      past=1, future=frames, shape=shape)
    return seq
