"""Object motion under contact-anchored reference systems, and the
spatial-temporal graph that stacks the ground system with every anchor.

Two orientation modes exist. ``translation_only`` subtracts the anchor's
position and keeps world orientation; ``bone_frame`` also expresses the
object in the frame of the bone carrying the anchor.
"""
from dataclasses import dataclass

import numpy as np

from . import rotations as R
from .errors import ShapeError

MODES = ("translation_only", "bone_frame")


def _as_matrices(frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1:] == (4,):
        return R.quat_to_matrix(frames)
    if frames.shape[-2:] == (3, 3):
        return frames
    raise ShapeError(f"bone frames must be (..., 4) quaternions or (..., 3, 3) matrices, got {frames.shape}")


def _check(n, anchor, mode, bone_frames):
    if mode not in MODES:
        raise ValueError(f"unknown orientation mode {mode!r}")
    anchor = np.asarray(anchor, dtype=np.float64)
    if anchor.shape != (n, 3):
        raise ShapeError(f"anchor track must be ({n}, 3), got {anchor.shape}")
    if mode == "bone_frame":
        if bone_frames is None:
            raise ValueError("bone_frame mode needs bone_frames")
        m = _as_matrices(bone_frames)
        if m.shape != (n, 3, 3):
            raise ShapeError(f"bone frames must cover {n} frames, got {m.shape[:-2]}")
        return anchor, m
    return anchor, None


def to_reference(rotation, translation, anchor, mode="translation_only", bone_frames=None):
    """World object motion (T, 4), (T, 3) -> motion relative to an anchor track."""
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    n = translation.shape[0]
    if rotation.shape != (n, 4) or translation.shape != (n, 3):
        raise ShapeError(f"object motion must be ({n}, 4) and ({n}, 3), got {rotation.shape}, {translation.shape}")
    anchor, m = _check(n, anchor, mode, bone_frames)
    if m is None:
        return rotation.copy(), translation - anchor
    mt = np.swapaxes(m, -1, -2)
    rot = R.matrix_to_quat(mt @ R.quat_to_matrix(rotation))
    return rot, np.einsum("tij,tj->ti", mt, translation - anchor)


def from_reference(rotation, translation, anchor, mode="translation_only", bone_frames=None):
    """Inverse of :func:`to_reference`."""
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    n = translation.shape[0]
    if rotation.shape != (n, 4) or translation.shape != (n, 3):
        raise ShapeError(f"object motion must be ({n}, 4) and ({n}, 3), got {rotation.shape}, {translation.shape}")
    anchor, m = _check(n, anchor, mode, bone_frames)
    if m is None:
        return rotation.copy(), translation + anchor
    rot = R.matrix_to_quat(m @ R.quat_to_matrix(rotation))
    return rot, np.einsum("tij,tj->ti", m, translation) + anchor


def features_to_reference(features, anchor, bone_frames=None):
    """Same transform on 9-wide object features (..., 9) with anchors (..., 3).

    The 6D columns rotate linearly, so this works on any leading shape.
    """
    rot6 = features[..., :6]
    t = features[..., 6:] - anchor
    if bone_frames is None:
        return np.concatenate([np.broadcast_to(rot6, t.shape[:-1] + (6,)), t], axis=-1)
    mt = np.swapaxes(bone_frames, -1, -2)
    c1 = np.einsum("...ij,...j->...i", mt, rot6[..., :3])
    c2 = np.einsum("...ij,...j->...i", mt, rot6[..., 3:])
    return np.concatenate([c1, c2, np.einsum("...ij,...j->...i", mt, t)], axis=-1)


def features_from_reference(features, anchor, bone_frames=None):
    rot6 = features[..., :6]
    t = features[..., 6:] + anchor
    if bone_frames is None:
        return np.concatenate([np.broadcast_to(rot6, t.shape[:-1] + (6,)), t], axis=-1)
    c1 = np.einsum("...ij,...j->...i", bone_frames, rot6[..., :3])
    c2 = np.einsum("...ij,...j->...i", bone_frames, rot6[..., 3:])
    t = np.einsum("...ij,...j->...i", bone_frames, features[..., 6:]) + anchor
    return np.concatenate([c1, c2, t], axis=-1)


@dataclass(frozen=True, eq=False)
class StGraph:
    """Object features under every reference system: (T, 1 + count, 9).

    Node 0 is the ground system; node j + 1 is anchored at contact point j.
    """

    features: np.ndarray
    orientation_mode: str = "translation_only"

    @property
    def num_frames(self):
        return self.features.shape[0]

    @property
    def num_nodes(self):
        return self.features.shape[1]


def reference_tracks(joints, body, contact_mode="marker", orientation_mode="translation_only"):
    """Anchor positions (T, count, 3) and, for bone_frame mode, their frames (T, count, 3, 3)."""
    anchors = body.contact_points(joints, contact_mode)
    frames = body.contact_frames(joints, contact_mode) if orientation_mode == "bone_frame" else None
    return anchors, frames


def graph_features(world_features, anchors, frames=None, relative=True):
    """Stack ground-node features with every anchored node: (T, 1 + count, 9).

    With ``relative=False`` every node carries the world features; this is the
    ablation without reference transforms.
    """
    world_features = np.asarray(world_features, dtype=np.float64)
    count = anchors.shape[1]
    if relative:
        rel = features_to_reference(world_features[:, None, :], anchors, frames)
    else:
        rel = np.repeat(world_features[:, None, :], count, axis=1)
    return np.concatenate([world_features[:, None, :], rel], axis=1)


def build_st_graph(seq, body, contact_mode="marker", orientation_mode="translation_only",
                   frames="past", relative=True):
    """Graph over the past frames (or ``frames='all'``) of a sequence."""
    if orientation_mode not in MODES:
        raise ValueError(f"unknown orientation mode {orientation_mode!r}")
    stop = seq.past if frames == "past" else seq.num_frames
    joints = seq.human[:stop]
    world = np.concatenate([R.quat_to_rot6d(seq.obj_rot[:stop]), seq.obj_trans[:stop]], axis=1)
    anchors, fr = reference_tracks(joints, body, contact_mode, orientation_mode)
    return StGraph(graph_features(world, anchors, fr, relative), orientation_mode)
