"""Shared data model: poses, rigid transforms, HOI sequences and their flat
feature layout.

Feature layout per frame (width ``3*J + 9``)::

    [ joint_0 xyz, ..., joint_{J-1} xyz, object rot6d (6), object translation (3) ]
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rotations as R
from .errors import ShapeError

OBJECT_DIM = 9


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _unit_quats(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1:] != (4,):
        raise ShapeError(f"quaternion: expected trailing dimension 4, got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion contains non-finite values")
    n = np.linalg.norm(q, axis=-1)
    # leave already-unit values untouched so serialisation round trips are exact
    if q.size and np.max(np.abs(n - 1.0)) > 1e-12:
        q = R.normalize_quat(q)
    return R.canonicalize_quat(q)


@dataclass(frozen=True, eq=False)
class HumanPose:
    joints: np.ndarray  # (J, 3), metres, world frame

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3 or j.shape[0] < 2:
            raise ShapeError(f"HumanPose.joints must be (J>=2, 3), got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("HumanPose.joints contains non-finite values")
        object.__setattr__(self, "joints", _frozen(j))

    @property
    def num_joints(self):
        return self.joints.shape[0]


@dataclass(frozen=True, eq=False)
class ObjectPose:
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ShapeError(f"ObjectPose.translation must be a finite 3-vector, got {t.shape}")
        q = np.asarray(self.rotation, dtype=np.float64)
        if q.shape != (4,):
            raise ShapeError(f"ObjectPose.rotation must be a quaternion, got {q.shape}")
        object.__setattr__(self, "rotation", _frozen(_unit_quats(q)))
        object.__setattr__(self, "translation", _frozen(t))

    def transform(self):
        return Se3Transform(self.rotation, self.translation)


@dataclass(frozen=True, eq=False)
class Se3Transform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(_unit_quats(self.rotation)))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape[-1:] != (3,):
            raise ShapeError(f"translation must end in 3, got {t.shape}")
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls(R.quat_identity(), np.zeros(3))

    @classmethod
    def translate(cls, t):
        return cls(R.quat_identity(), t)

    @classmethod
    def rotate(cls, axis, angle):
        return cls(R.axis_angle_to_quat(axis, angle), np.zeros(3))

    def apply(self, points):
        return R.quat_apply(self.rotation, np.asarray(points, dtype=np.float64)) + self.translation

    def compose(self, other):
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        q = R.quat_mul(self.rotation, other.rotation)
        t = R.quat_apply(self.rotation, other.translation) + self.translation
        return Se3Transform(q, t)

    def invert(self):
        qi = R.quat_conj(self.rotation)
        return Se3Transform(qi, -R.quat_apply(qi, self.translation))

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = R.quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def allclose(self, other, atol=1e-9):
        # compare as matrices so the quaternion double cover does not matter
        return np.allclose(self.matrix(), other.matrix(), atol=atol, rtol=0.0)


def compose(a, b):
    return a.compose(b)


def invert(a):
    return a.invert()


@dataclass(frozen=True, eq=False)
class ObjectShape:
    """Canonical-pose object point cloud plus the indices of its keypoints."""

    points: np.ndarray  # (N, 3)
    keypoints: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    name: str = "object"

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ShapeError(f"ObjectShape.points must be (N, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("ObjectShape.points contains non-finite values")
        k = np.asarray(self.keypoints, dtype=np.int64).reshape(-1)
        if k.size and (k.min() < 0 or k.max() >= p.shape[0]):
            raise IndexError("keypoint index out of range")
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "keypoints", _frozen(k, np.int64))

    @property
    def keypoint_positions(self):
        return self.points[self.keypoints]


def pose_points(points, rotation, translation):
    """Rigidly pose canonical points for every frame: (T, N, 3)."""
    rotation = np.asarray(rotation, dtype=np.float64)
    m = R.quat_to_matrix(rotation)  # (T, 3, 3)
    return np.einsum("tij,nj->tni", m, points) + np.asarray(translation)[:, None, :]


@dataclass(frozen=True, eq=False)
class HoiSequence:
    """H past frames followed by F future frames of human joints and object pose."""

    human: np.ndarray  # (T, J, 3)
    obj_rot: np.ndarray  # (T, 4) unit quaternions
    obj_trans: np.ndarray  # (T, 3)
    past: int
    future: int
    fps: float = 30.0
    shape: Optional[ObjectShape] = None

    def __post_init__(self):
        h = np.asarray(self.human, dtype=np.float64)
        if h.ndim != 3 or h.shape[2] != 3 or h.shape[1] < 2:
            raise ShapeError(f"human must be (T, J>=2, 3), got {h.shape}")
        t = np.asarray(self.obj_trans, dtype=np.float64)
        q = np.asarray(self.obj_rot, dtype=np.float64)
        n = h.shape[0]
        if q.shape != (n, 4) or t.shape != (n, 3):
            raise ShapeError(f"object arrays must be ({n}, 4) and ({n}, 3), got {q.shape} and {t.shape}")
        if int(self.past) < 1 or int(self.future) < 1:
            raise ValueError(f"split must have H >= 1 and F >= 1, got ({self.past}, {self.future})")
        if int(self.past) + int(self.future) != n:
            raise ShapeError(f"frame count {n} != H + F = {self.past} + {self.future}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(t))):
            raise ValueError("sequence contains non-finite values")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "human", _frozen(h))
        object.__setattr__(self, "obj_rot", _frozen(_unit_quats(q)))
        object.__setattr__(self, "obj_trans", _frozen(t))
        object.__setattr__(self, "past", int(self.past))
        object.__setattr__(self, "future", int(self.future))
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def num_frames(self):
        return self.human.shape[0]

    @property
    def num_joints(self):
        return self.human.shape[1]

    def human_pose(self, i):
        return HumanPose(self.human[i])

    def object_pose(self, i):
        return ObjectPose(self.obj_rot[i], self.obj_trans[i])

    def object_points(self, keypoints=False):
        """Posed object cloud (T, N, 3), or keypoints (T, K, 3)."""
        if self.shape is None:
            raise ValueError("sequence has no object shape attached")
        pts = self.shape.keypoint_positions if keypoints else self.shape.points
        return pose_points(pts, self.obj_rot, self.obj_trans)

    def frames(self, start, stop, past=None):
        """Sub-sequence over [start, stop) with a new past/future split."""
        n = stop - start
        past = self.past if past is None else past
        return HoiSequence(self.human[start:stop], self.obj_rot[start:stop], self.obj_trans[start:stop],
                           past=past, future=n - past, fps=self.fps, shape=self.shape)

    def with_split(self, past):
        return HoiSequence(self.human, self.obj_rot, self.obj_trans, past, self.num_frames - past,
                           self.fps, self.shape)

    def replace(self, **kw):
        args = dict(human=self.human, obj_rot=self.obj_rot, obj_trans=self.obj_trans,
                    past=self.past, future=self.future, fps=self.fps, shape=self.shape)
        args.update(kw)
        return HoiSequence(**args)

    def equals(self, other, atol=0.0):
        if not isinstance(other, HoiSequence):
            return False
        if (self.past, self.future, self.fps) != (other.past, other.future, other.fps):
            return False
        if self.human.shape != other.human.shape:
            return False
        ok = (np.allclose(self.human, other.human, atol=atol, rtol=0)
              and np.allclose(self.obj_rot, other.obj_rot, atol=atol, rtol=0)
              and np.allclose(self.obj_trans, other.obj_trans, atol=atol, rtol=0))
        return bool(ok)


def feature_width(num_joints):
    return 3 * num_joints + OBJECT_DIM


def object_slice(num_joints):
    return slice(3 * num_joints, 3 * num_joints + OBJECT_DIM)


def flatten_state(seq):
    """(T, 3J + 9) float64 features for a sequence."""
    t = seq.num_frames
    return np.concatenate([
        seq.human.reshape(t, -1),
        R.quat_to_rot6d(seq.obj_rot),
        seq.obj_trans,
    ], axis=1)


def unflatten_state(features, num_joints, past, future=None, fps=30.0, shape=None):
    features = np.asarray(features, dtype=np.float64)
    width = feature_width(num_joints)
    if features.ndim != 2 or features.shape[1] != width:
        raise ShapeError(f"feature width mismatch: expected (T, {width}) for J={num_joints}, "
                         f"got {features.shape}")
    t = features.shape[0]
    future = t - past if future is None else future
    human = features[:, :3 * num_joints].reshape(t, num_joints, 3)
    rot = R.rot6d_to_quat(features[:, 3 * num_joints:3 * num_joints + 6])
    trans = features[:, 3 * num_joints + 6:]
    return HoiSequence(human, rot, trans, past=past, future=future, fps=fps, shape=shape)


def concat_frames(a, b, past=None):
    """Join two sequences in time; the split defaults to a's length as the past."""
    past = a.num_frames if past is None else past
    n = a.num_frames + b.num_frames
    return HoiSequence(np.concatenate([a.human, b.human]), np.concatenate([a.obj_rot, b.obj_rot]),
                       np.concatenate([a.obj_trans, b.obj_trans]), past=past, future=n - past,
                       fps=a.fps, shape=a.shape if a.shape is not None else b.shape)
