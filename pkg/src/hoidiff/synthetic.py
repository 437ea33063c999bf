"""Synthetic desk-scale HOI clips.

Human motion comes from smooth random joint-angle splines pushed through
forward kinematics. Objects are parametric primitives attached to a hand
marker (carry, swing, release, push) or left on the floor (no_contact).
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline

from . import rotations as R
from .body import HAND_MARKERS, BodyProxy, body_sdf, forward_kinematics
from .contact import min_distances
from .core import HoiSequence, ObjectShape, pose_points
from .errors import ConfigError, GenerationError

KINDS = ("carry", "swing", "release", "push", "no_contact")
SHAPES = ("box", "cylinder", "sphere")
NUM_POINTS = 256
NUM_KEYPOINTS = 12

# local joint-angle ranges (radians) about x, y, z for the default skeleton
_RANGES = {
    1: ((-0.1, 0.2), (-0.1, 0.1), (-0.2, 0.2)),
    2: ((-0.1, 0.15), (-0.08, 0.08), (-0.15, 0.15)),
    3: ((-0.2, 0.2), (-0.1, 0.1), (-0.2, 0.2)),
    4: ((-0.2, 0.2), (-0.1, 0.1), (-0.3, 0.3)),
    5: ((-0.3, 1.1), (-0.35, 0.05), (-0.3, 0.3)),
    6: ((0.26, 1.9), (0.0, 0.0), (-0.2, 0.2)),
    7: ((-0.4, 0.4), (-0.2, 0.2), (-0.4, 0.4)),
    8: ((-0.3, 0.3), (0.0, 0.0), (0.0, 0.0)),
    9: ((-0.3, 1.1), (-0.05, 0.35), (-0.3, 0.3)),
    10: ((0.26, 1.9), (0.0, 0.0), (-0.2, 0.2)),
    11: ((-0.4, 0.4), (-0.2, 0.2), (-0.4, 0.4)),
    12: ((-0.3, 0.3), (0.0, 0.0), (0.0, 0.0)),
    13: ((-0.4, 0.3), (-0.1, 0.1), (-0.1, 0.1)),
    14: ((-0.8, 0.0), (0.0, 0.0), (0.0, 0.0)),
    15: ((-0.2, 0.3), (0.0, 0.0), (0.0, 0.0)),
    16: ((-0.2, 0.2), (0.0, 0.0), (0.0, 0.0)),
    17: ((-0.4, 0.3), (-0.1, 0.1), (-0.1, 0.1)),
    18: ((-0.8, 0.0), (0.0, 0.0), (0.0, 0.0)),
    19: ((-0.2, 0.3), (0.0, 0.0), (0.0, 0.0)),
    20: ((-0.2, 0.2), (0.0, 0.0), (0.0, 0.0)),
}
# the arm holding an object stays raised in front of the body
_HOLD_RANGES = {
    "l": {5: ((0.5, 1.1), (-0.45, -0.15), (-0.2, 0.2)), 6: ((0.5, 1.3), (0.0, 0.0), (-0.2, 0.2))},
    "r": {9: ((0.5, 1.1), (0.15, 0.45), (-0.2, 0.2)), 10: ((0.5, 1.3), (0.0, 0.0), (-0.2, 0.2))},
}
_HOLD_CHAIN = {"l": (1, 2, 5, 6, 7, 8), "r": (1, 2, 9, 10, 11, 12)}
_HOLD_AMP = 0.08
_KNOT_SPACING = 15
_PENETRATION_TOL = 0.005
_MAX_TRIES = 50


# ---------------------------------------------------------------- shapes

def _icosahedron():
    g = (1 + 5 ** 0.5) / 2
    v = []
    for a in (-1, 1):
        for b in (-g, g):
            v += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_shape(kind, rng, size=None, num_points=NUM_POINTS):
    """A primitive centred at the origin with the first 12 points as keypoints."""
    if num_points < NUM_KEYPOINTS:
        raise ConfigError(f"need at least {NUM_KEYPOINTS} points")
    n = num_points - NUM_KEYPOINTS
    if kind == "box":
        h = np.asarray(size if size is not None else rng.uniform(0.05, 0.12, 3), dtype=np.float64)
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float) * h
        sides = np.array([[h[0], 0, 0], [-h[0], 0, 0], [0, h[1], 0], [0, -h[1], 0]])
        areas = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(-1, 1, (n, 3)) * h
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts[np.arange(n), axis] = sign * h[axis]
        key = np.concatenate([corners, sides])
    elif kind == "cylinder":
        r, hh = (size if size is not None else (rng.uniform(0.04, 0.08), rng.uniform(0.06, 0.14)))
        ang = np.arange(6) * np.pi / 3
        rim = np.stack([r * np.cos(ang), r * np.sin(ang), np.full(6, hh)], axis=1)
        key = np.concatenate([rim, rim * [1, 1, -1]])
        side_area, cap_area = 2 * np.pi * r * 2 * hh, np.pi * r * r
        part = rng.choice(3, size=n, p=np.array([side_area, cap_area, cap_area]) / (side_area + 2 * cap_area))
        th = rng.uniform(0, 2 * np.pi, n)
        rad = np.where(part == 0, r, r * np.sqrt(rng.uniform(0, 1, n)))
        z = np.where(part == 0, rng.uniform(-hh, hh, n), np.where(part == 1, hh, -hh))
        pts = np.stack([rad * np.cos(th), rad * np.sin(th), z], axis=1)
    elif kind == "sphere":
        r = size if size is not None else rng.uniform(0.05, 0.1)
        key = _icosahedron() * r
        d = rng.standard_normal((n, 3))
        pts = d / np.linalg.norm(d, axis=1, keepdims=True) * r
    else:
        raise ConfigError(f"unknown shape kind {kind!r}; expected one of {SHAPES}")
    return ObjectShape(np.concatenate([key, pts]), np.arange(NUM_KEYPOINTS), name=kind)


# ---------------------------------------------------------------- human motion

def _spline_track(rng, frames, lo, hi, amp=None):
    """Natural cubic spline through uniform knots in [lo, hi].

    With ``amp`` the knots stay within ``amp`` of a random centre in [lo, hi].
    """
    if lo == hi:
        return np.full(frames, lo)
    knots = np.arange(0, frames + _KNOT_SPACING, _KNOT_SPACING)
    if amp is not None:
        c = rng.uniform(lo, hi)
        lo, hi = c - amp, c + amp
    return CubicSpline(knots, rng.uniform(lo, hi, knots.shape[0]), bc_type="natural")(np.arange(frames))


def random_human(rng, skeleton, frames, fps=30.0, hold=None):
    """Joint positions (frames, J, 3) from random spline joint angles.

    ``hold`` ('l' or 'r') keeps that arm raised in front of the body and
    lets it, the spine and the heading wander only slightly, so a held
    object does not sweep through the hand.
    Skeletons other than the default get small random angles everywhere.
    """
    n = skeleton.num_joints
    ranges = dict(_RANGES) if n == 21 else {j: ((-0.2, 0.2),) * 3 for j in range(1, n)}
    stiff = ()
    if hold is not None and n == 21:
        ranges.update(_HOLD_RANGES[hold])
        stiff = _HOLD_CHAIN[hold]
    q = np.zeros((frames, n, 4))
    q[..., 0] = 1.0
    ex, ey, ez = np.eye(3)
    for j, (rx, ry, rz) in ranges.items():
        amp = _HOLD_AMP if j in stiff else None
        ax = R.axis_angle_to_quat(ex, _spline_track(rng, frames, *rx, amp=amp))
        ay = R.axis_angle_to_quat(ey, _spline_track(rng, frames, *ry, amp=amp))
        az = R.axis_angle_to_quat(ez, _spline_track(rng, frames, *rz, amp=amp))
        q[:, j] = R.quat_mul(R.quat_mul(az, ay), ax)
    # root: yaw plus a slow horizontal drift
    yaw0 = rng.uniform(-np.pi, np.pi)
    turn = 0.15 if stiff else 0.6
    yaw = yaw0 + np.cumsum(_spline_track(rng, frames, -turn, turn)) / fps
    q[:, 0] = R.axis_angle_to_quat(ez, yaw)
    speed = _spline_track(rng, frames, 0.0, 0.3)
    heading = yaw + np.pi / 2
    vel = np.stack([np.cos(heading), np.sin(heading), np.zeros(frames)], axis=1) * speed[:, None]
    root = skeleton.rest_offsets[0] + np.cumsum(vel, axis=0) / fps + np.array([*rng.uniform(-1, 1, 2), 0.0])
    root[:, 2] += _spline_track(rng, frames, -0.02, 0.02)
    return forward_kinematics(skeleton, q, root)


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    kind: str = "carry"
    duration: int = 35
    seed: int = 0
    past: int = 10
    future: Optional[int] = None
    shape: Union[str, ObjectShape, None] = None
    body: Optional[BodyProxy] = None
    fps: float = 30.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        fut = self.duration - self.past if self.future is None else self.future
        if self.past < 1 or fut < 1 or self.duration < self.past + fut:
            raise ConfigError(f"duration {self.duration} cannot hold H={self.past}, F={fut}")
        if isinstance(self.shape, str) and self.shape not in SHAPES:
            raise ConfigError(f"unknown shape kind {self.shape!r}")


@dataclass(frozen=True, eq=False)
class SyntheticClip:
    sequence: HoiSequence
    attach_marker: Optional[int]  # None for no_contact
    contact_frames: np.ndarray  # bool (T,), frames with exact marker contact


def _marker_normal(body, joints, m):
    frames = body.contact_frames(joints, "marker")[..., m, :, :]
    n = frames @ body.markers.offsets[m]
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _attach(body, joints, shape, rng, hand):
    """Pick a hand marker and a rotation; return (marker, q0, contact point index)."""
    markers = [m for m in HAND_MARKERS if body.markers.names[m].startswith(hand)] or list(HAND_MARKERS)
    chest = joints[0, 2]
    pos = body.marker_positions(joints[0])
    best = max(markers, key=lambda m: float(_marker_normal(body, joints[0], m) @ (pos[m] - chest)))
    q0 = R.canonicalize_quat(R.normalize_quat(rng.standard_normal(4)))
    n0 = _marker_normal(body, joints[0], best)
    k = int(np.argmin(shape.points @ R.quat_to_matrix(q0).T @ n0))
    return best, q0, k


def _try_clip(sc, rng, body, shape):
    T = sc.duration
    hold = None if sc.kind == "no_contact" else ("l" if rng.uniform() < 0.5 else "r")
    joints = random_human(rng, body.skeleton, T, sc.fps, hold)
    markers = body.marker_positions(joints)
    contact = np.zeros(T, dtype=bool)
    if sc.kind == "no_contact":
        q0 = R.axis_angle_to_quat(np.array([0.0, 0.0, 1.0]), rng.uniform(-np.pi, np.pi))
        rot = np.broadcast_to(q0, (T, 4))
        low = (shape.points @ R.quat_to_matrix(q0).T)[:, 2].min()
        ang = rng.uniform(-np.pi, np.pi)
        dist = rng.uniform(0.6, 1.5)
        centre = joints[:, 0].mean(axis=0)
        t0 = np.array([centre[0] + dist * np.cos(ang), centre[1] + dist * np.sin(ang), -low])
        trans = np.broadcast_to(t0, (T, 3))
        return joints, np.array(rot), np.array(trans), None, contact
    m, q0, k = _attach(body, joints, shape, rng, hold)
    pk = shape.points[k]
    if sc.kind == "release":
        # after letting go the body backs away from the object along the contact normal
        r = int(rng.integers(max(1, T // 3), max(2, 2 * T // 3)))
        back = _marker_normal(body, joints[r], m) * rng.uniform(0.2, 0.4) / sc.fps
        joints = joints - np.maximum(np.arange(T) - r, 0)[:, None, None] * back
        markers = body.marker_positions(joints)
    if sc.kind == "swing":
        axis = _marker_normal(body, joints[0], m)
        omega = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
        spin = R.axis_angle_to_quat(axis, omega * np.arange(T) / sc.fps)
        rot = R.quat_mul(spin, np.broadcast_to(q0, (T, 4)))
    else:
        rot = np.broadcast_to(q0, (T, 4)).copy()
    trans = markers[:, m] - R.quat_apply(rot, pk)
    contact[:] = True
    if sc.kind == "release":
        trans[r:] = trans[r]
        contact[r:] = False
    elif sc.kind == "push":
        # slides at a fixed height on the far side of the contact normal
        up = _marker_normal(body, joints[0], m)[2] >= 0
        z = trans[:, 2].max() if up else trans[:, 2].min()
        contact[:] = np.abs(trans[:, 2] - z) < 1e-12
        trans[:, 2] = z
    return joints, R.canonicalize_quat(rot), trans, m, contact


def _acceptable(sc, body, shape, joints, rot, trans, eps_contact):
    pts = pose_points(shape.points, rot, trans)
    if body_sdf(joints, body.skeleton, pts).min() < -_PENETRATION_TOL:
        return False
    if sc.kind == "no_contact":
        near = min_distances(body.contact_points(joints, "marker"), pts).min()
        near_j = min_distances(joints, pts).min()
        return min(near, near_j) > 3 * eps_contact
    return True


def generate_clip(scenario, eps_contact=0.05):
    """Generate a clip plus its construction metadata.

    Candidate motions that push the object more than 5 mm into the body
    are redrawn (up to 50 times) from the same seeded stream.
    """
    sc = scenario
    body = sc.body or BodyProxy.default()
    ss = np.random.SeedSequence([int(sc.seed), KINDS.index(sc.kind)])
    rng = np.random.default_rng(ss)
    if isinstance(sc.shape, ObjectShape):
        shape = sc.shape
    else:
        shape = make_shape(sc.shape or SHAPES[int(rng.integers(len(SHAPES)))], rng)
    for _ in range(_MAX_TRIES):
        joints, rot, trans, m, contact = _try_clip(sc, rng, body, shape)
        if _acceptable(sc, body, shape, joints, rot, trans, eps_contact):
            fut = sc.duration - sc.past if sc.future is None else sc.future
            n = sc.past + fut
            seq = HoiSequence(joints[:n], rot[:n], trans[:n], sc.past, fut, sc.fps, shape)
            return SyntheticClip(seq, m, contact[:n])
    raise GenerationError(f"no feasible {sc.kind} clip for seed {sc.seed} after {_MAX_TRIES} tries")


def generate_synthetic(scenario, eps_contact=0.05):
    return generate_clip(scenario, eps_contact).sequence


def generate_corpus(kinds, count, seed=0, duration=35, past=10, body=None):
    """``count`` clips cycling through ``kinds``; clip i uses seed ``seed * 100003 + i``."""
    out = []
    for i in range(count):
        sc = Scenario(kind=kinds[i % len(kinds)], duration=duration, seed=seed * 100003 + i, past=past, body=body)
        out.append(generate_synthetic(sc))
    return out
