"""Articulated capsule body: forward kinematics, bone frames, surface markers
and the capsule-union signed distance field (negative inside).
"""
from dataclasses import dataclass

import numpy as np

from . import rotations as R
from .errors import ShapeError

# a reference direction is usable when its sine with the bone axis exceeds this
_MIN_SINE = 0.05


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint tree with rest offsets and one capsule per bone.

    Bone ``b`` connects joint ``parents[b + 1]`` to joint ``b + 1``;
    ``capsule_radii`` therefore has ``J - 1`` entries. ``rest_offsets[0]`` is
    the root's rest position.
    """

    parents: np.ndarray
    rest_offsets: np.ndarray
    capsule_radii: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        offsets = np.asarray(self.rest_offsets, dtype=np.float64)
        radii = np.asarray(self.capsule_radii, dtype=np.float64).reshape(-1)
        n = parents.shape[0]
        if n < 2:
            raise ShapeError("skeleton needs at least two joints")
        if parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, n):
            if not 0 <= parents[j] < j:
                raise ValueError(f"joint {j}: parent {parents[j]} must precede it")
        if offsets.shape != (n, 3) or not np.all(np.isfinite(offsets)):
            raise ShapeError(f"rest_offsets must be finite ({n}, 3), got {offsets.shape}")
        if radii.shape != (n - 1,):
            raise ShapeError(f"capsule_radii must have {n - 1} entries (one per bone), got {radii.shape}")
        if np.any(radii <= 0):
            raise ValueError("capsule radii must be positive")
        if np.any(np.linalg.norm(offsets[1:], axis=1) <= 0):
            raise ValueError("bone rest lengths must be positive")
        for name, a in (("parents", parents), ("rest_offsets", offsets), ("capsule_radii", radii)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "_frame_refs", self._build_frame_refs())

    @property
    def num_joints(self):
        return self.parents.shape[0]

    @property
    def num_bones(self):
        return self.parents.shape[0] - 1

    @property
    def bone_parent(self):
        return self.parents[1:]

    @property
    def bone_child(self):
        return np.arange(1, self.num_joints)

    def children(self, j):
        return [int(k) for k in np.nonzero(self.parents == j)[0]]

    def _build_frame_refs(self):
        # candidate (from, to) joint pairs giving a second direction for each
        # bone frame; all are built from joint positions so frames stay
        # equivariant under rigid motion of the whole body
        refs = []
        for b in range(self.num_bones):
            p, j = int(self.parents[b + 1]), b + 1
            cands = [(p, k) for k in self.children(p) if k != j]
            if self.parents[p] >= 0:
                cands.append((p, int(self.parents[p])))
            cands += [(j, k) for k in self.children(j)]
            # then bones further up the chain and finally any bone, so the
            # world-axis fallback is left for fully collinear skeletons
            a = int(self.parents[p]) if self.parents[p] >= 0 else -1
            while a >= 0 and self.parents[a] >= 0:
                cands.append((a, int(self.parents[a])))
                a = int(self.parents[a])
            cands += [(int(self.parents[k]), k) for k in range(1, self.num_joints)
                      if (int(self.parents[k]), k) not in cands and (k, int(self.parents[k])) not in cands
                      and k != j]
            refs.append(tuple(cands))
        return tuple(refs)

    def bone_lengths(self):
        return np.linalg.norm(self.rest_offsets[1:], axis=1)

    def to_dict(self):
        return {"parents": self.parents.tolist(), "rest_offsets": self.rest_offsets.tolist(),
                "capsule_radii": self.capsule_radii.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["parents"], d["rest_offsets"], d["capsule_radii"], tuple(d.get("names", ())))


@dataclass(frozen=True, eq=False)
class MarkerSet:
    """Surface markers: bone index, position along the bone in [0, 1] and a
    radial offset expressed in the bone frame (column 0 = bone axis)."""

    bones: np.ndarray
    bary: np.ndarray
    offsets: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        bones = np.asarray(self.bones, dtype=np.int64).reshape(-1)
        bary = np.asarray(self.bary, dtype=np.float64).reshape(-1)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        m = bones.shape[0]
        if m < 1:
            raise ShapeError("marker set must contain at least one marker")
        if bary.shape != (m,) or offsets.shape != (m, 3):
            raise ShapeError(f"marker arrays disagree: {bones.shape}, {bary.shape}, {offsets.shape}")
        if np.any(bary < 0) or np.any(bary > 1):
            raise ValueError("barycentric positions must lie in [0, 1]")
        for name, a in (("bones", bones), ("bary", bary), ("offsets", offsets)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return self.bones.shape[0]

    def validate(self, skeleton):
        if self.bones.min() < 0 or self.bones.max() >= skeleton.num_bones:
            raise IndexError("marker bone index out of range for skeleton")

    @classmethod
    def on_surface(cls, skeleton, spec):
        """Build markers lying on capsule surfaces from (bone, bary, angle[, name]) tuples."""
        bones, bary, offsets, names = [], [], [], []
        for item in spec:
            b, u, phi = item[:3]
            r = skeleton.capsule_radii[b]
            bones.append(b)
            bary.append(u)
            offsets.append([0.0, r * np.cos(phi), r * np.sin(phi)])
            names.append(item[3] if len(item) > 3 else f"m{len(names)}")
        ms = cls(bones, bary, offsets, tuple(names))
        ms.validate(skeleton)
        return ms

    def to_dict(self):
        return {"bones": self.bones.tolist(), "bary": self.bary.tolist(),
                "offsets": self.offsets.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["bones"], d["bary"], d["offsets"], tuple(d.get("names", ())))


def forward_kinematics(skeleton, joint_rotations, root_translation=None):
    """Joint positions from local joint rotations.

    Args:
        skeleton: the joint tree.
        joint_rotations: (..., J, 4) local unit quaternions; entry 0 is the
            root's world orientation.
        root_translation: (..., 3) root position; defaults to the rest root.

    Returns:
        (..., J, 3) joint positions. Each child sits at
        ``parent_position + parent_global_rotation @ rest_offset``.
    """
    q = np.asarray(joint_rotations, dtype=np.float64)
    n = skeleton.num_joints
    if q.shape[-2:] != (n, 4):
        raise ShapeError(f"expected (..., {n}, 4) joint rotations, got {q.shape}")
    lead = q.shape[:-2]
    if root_translation is None:
        root = np.broadcast_to(skeleton.rest_offsets[0], lead + (3,))
    else:
        root = np.broadcast_to(np.asarray(root_translation, dtype=np.float64), lead + (3,))
    glob = np.empty_like(q)
    pos = np.empty(lead + (n, 3))
    glob[..., 0, :] = q[..., 0, :]
    pos[..., 0, :] = root
    for j in range(1, n):
        p = skeleton.parents[j]
        glob[..., j, :] = R.quat_mul(glob[..., p, :], q[..., j, :])
        pos[..., j, :] = pos[..., p, :] + R.quat_apply(glob[..., p, :], skeleton.rest_offsets[j])
    return pos


def bone_frames(joints, skeleton):
    """Per-bone rotation matrices (..., B, 3, 3) built from joint positions.

    Column 0 is the bone axis (parent to child). Column 1 comes from
    Gram-Schmidt against the first usable reference direction (sibling bone,
    then the parent bone, then the child bone), so frames move rigidly with
    the body. World axes are the last resort for fully collinear chains.
    """
    joints = np.asarray(joints, dtype=np.float64)
    lead = joints.shape[:-2]
    out = np.empty(lead + (skeleton.num_bones, 3, 3))
    fallback = (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    for b in range(skeleton.num_bones):
        p, j = skeleton.parents[b + 1], b + 1
        axis = joints[..., j, :] - joints[..., p, :]
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        second = np.zeros(lead + (3,))
        done = np.zeros(lead, dtype=bool)
        cands = [joints[..., c1, :] - joints[..., c0, :] for c0, c1 in skeleton._frame_refs[b]]
        cands += [np.broadcast_to(f, lead + (3,)) for f in fallback]
        for v in cands:
            perp = v - np.sum(v * axis, axis=-1, keepdims=True) * axis
            pn = np.linalg.norm(perp, axis=-1)
            vn = np.linalg.norm(v, axis=-1)
            ok = (~done) & (pn > _MIN_SINE * np.maximum(vn, 1e-12))
            safe = np.where(pn > 0, pn, 1.0)[..., None]
            second = np.where(ok[..., None], perp / safe, second)
            done |= ok
        third = np.cross(axis, second)
        out[..., b, :, :] = np.stack([axis, second, third], axis=-1)
    return out


def marker_positions(joints, skeleton, markers):
    """(..., M, 3) marker positions for joint positions (..., J, 3)."""
    joints = np.asarray(joints, dtype=np.float64)
    frames = bone_frames(joints, skeleton)
    child = markers.bones + 1
    parent = skeleton.parents[child]
    a = joints[..., parent, :]
    b = joints[..., child, :]
    base = a + markers.bary[:, None] * (b - a)
    return base + np.einsum("...mij,mj->...mi", frames[..., markers.bones, :, :], markers.offsets)


def marker_frames(joints, skeleton, markers):
    """Bone frame carried by each marker: (..., M, 3, 3)."""
    return bone_frames(joints, skeleton)[..., markers.bones, :, :]


def joint_frames(joints, skeleton):
    """A frame per joint: the frame of the bone ending at it (root uses its first child bone)."""
    frames = bone_frames(joints, skeleton)
    idx = np.empty(skeleton.num_joints, dtype=np.int64)
    idx[1:] = np.arange(skeleton.num_bones)
    idx[0] = skeleton.children(0)[0] - 1
    return frames[..., idx, :, :]


def segment_distance(points, a, b):
    """Distance from points (..., N, 3) to segments a-b (..., S, 3): (..., N, S)."""
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    ap = points[..., :, None, :] - a[..., None, :, :]
    t = np.clip(np.sum(ap * ab[..., None, :, :], axis=-1) / denom[..., None, :], 0.0, 1.0)
    closest = a[..., None, :, :] + t[..., None] * ab[..., None, :, :]
    return np.linalg.norm(points[..., :, None, :] - closest, axis=-1)


def capsule_distances(joints, skeleton, query):
    """Signed distance of every query point to every capsule: (..., N, B)."""
    joints = np.asarray(joints, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    a = joints[..., skeleton.bone_parent, :]
    b = joints[..., skeleton.bone_child, :]
    return segment_distance(query, a, b) - skeleton.capsule_radii


def body_sdf(joints, skeleton, query):
    """Capsule-union signed distance, negative inside the body.

    ``joints`` is (..., J, 3) and ``query`` (..., N, 3) with matching leading
    dimensions (or a single (3,) point for a single pose). Returns (..., N).
    """
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    if single:
        query = query[None]
    d = capsule_distances(joints, skeleton, query).min(axis=-1)
    return d[..., 0] if single else d


def check_pose(joints, skeleton, tol=1e-6):
    """Raise if joint positions are inconsistent with the skeleton's bone lengths."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape[-2:] != (skeleton.num_joints, 3):
        raise ShapeError(f"pose has shape {joints.shape}, skeleton has {skeleton.num_joints} joints")
    lengths = np.linalg.norm(joints[..., skeleton.bone_child, :] - joints[..., skeleton.bone_parent, :], axis=-1)
    if np.any(lengths <= tol):
        raise ValueError("pose has a zero-length bone")


# default 21-joint humanoid, z up, facing +y, metres
JOINT_NAMES = (
    "pelvis", "spine", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand",
    "l_hip", "l_knee", "l_ankle", "l_toe",
    "r_hip", "r_knee", "r_ankle", "r_toe",
)
_PARENTS = (-1, 0, 1, 2, 3, 2, 5, 6, 7, 2, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19)


def default_skeleton():
    offsets = [
        (0.0, 0.0, 0.95),
        (0.0, 0.02, 0.12), (0.0, -0.02, 0.20), (0.0, 0.0, 0.18), (0.0, 0.04, 0.15),
        (0.18, 0.0, 0.14), (0.0, 0.0, -0.28), (0.0, 0.05, -0.24), (0.0, 0.02, -0.08),
        (-0.18, 0.0, 0.14), (0.0, 0.0, -0.28), (0.0, 0.05, -0.24), (0.0, 0.02, -0.08),
        (0.09, 0.0, -0.05), (0.0, 0.03, -0.42), (0.0, -0.03, -0.40), (0.0, 0.13, -0.06),
        (-0.09, 0.0, -0.05), (0.0, 0.03, -0.42), (0.0, -0.03, -0.40), (0.0, 0.13, -0.06),
    ]
    # per bone, indexed by child joint - 1
    radii = [
        0.12, 0.12, 0.05, 0.09,
        0.05, 0.05, 0.04, 0.035,
        0.05, 0.05, 0.04, 0.035,
        0.08, 0.07, 0.05, 0.04,
        0.08, 0.07, 0.05, 0.04,
    ]
    return Skeleton(_PARENTS, offsets, radii, JOINT_NAMES)


def default_markers(skeleton=None):
    """16 capsule-surface markers for the default skeleton."""
    skeleton = skeleton or default_skeleton()
    pi = np.pi
    spec = [
        (7, 0.7, 0.0, "l_hand_a"), (7, 0.7, pi, "l_hand_b"),
        (11, 0.7, 0.0, "r_hand_a"), (11, 0.7, pi, "r_hand_b"),
        (6, 0.5, pi / 2, "l_forearm"), (10, 0.5, pi / 2, "r_forearm"),
        (5, 0.5, pi / 2, "l_upperarm"), (9, 0.5, pi / 2, "r_upperarm"),
        (1, 0.6, pi / 2, "chest"), (1, 0.6, -pi / 2, "back"),
        (0, 0.4, pi / 2, "belly"), (3, 0.7, pi / 2, "head"),
        (13, 0.4, pi / 2, "l_thigh"), (17, 0.4, pi / 2, "r_thigh"),
        (14, 0.5, pi / 2, "l_shin"), (18, 0.5, pi / 2, "r_shin"),
    ]
    return MarkerSet.on_surface(skeleton, spec)


HAND_MARKERS = (0, 1, 2, 3)


@dataclass(frozen=True, eq=False)
class BodyProxy:
    """Skeleton plus markers; the stand-in for a skinned body mesh."""

    skeleton: Skeleton
    markers: MarkerSet

    def __post_init__(self):
        self.markers.validate(self.skeleton)

    @classmethod
    def default(cls):
        sk = default_skeleton()
        return cls(sk, default_markers(sk))

    def marker_positions(self, joints):
        return marker_positions(joints, self.skeleton, self.markers)

    def contact_points(self, joints, mode="marker"):
        """Candidate reference points: markers (mesh mode) or the joints themselves."""
        if mode == "marker":
            return self.marker_positions(joints)
        if mode == "joint":
            return np.asarray(joints, dtype=np.float64)
        raise ValueError(f"unknown contact mode {mode!r}")

    def contact_frames(self, joints, mode="marker"):
        if mode == "marker":
            return marker_frames(joints, self.skeleton, self.markers)
        if mode == "joint":
            return joint_frames(joints, self.skeleton)
        raise ValueError(f"unknown contact mode {mode!r}")

    def num_contact_points(self, mode="marker"):
        return len(self.markers) if mode == "marker" else self.skeleton.num_joints

    def sdf(self, joints, query):
        return body_sdf(joints, self.skeleton, query)

    def to_dict(self):
        return {"skeleton": self.skeleton.to_dict(), "markers": self.markers.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Skeleton.from_dict(d["skeleton"]), MarkerSet.from_dict(d["markers"]))
