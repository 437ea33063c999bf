"""Contact and penetration states of a (denoised) HOI and reference selection."""
import numpy as np

from .body import body_sdf
from .core import pose_points
from .errors import ShapeError

GROUND = -1


def min_distances(query, cloud):
    """Per frame, distance from each query point to its nearest cloud point.

    Args:
        query: (F, Q, 3) contact points.
        cloud: (F, N, 3) object points, N >= 1.

    Returns:
        (F, Q) distances.
    """
    query = np.asarray(query, dtype=np.float64)
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[-2] == 0:
        raise ValueError("object point cloud is empty")
    if query.shape[0] != cloud.shape[0]:
        raise ShapeError(f"frame counts differ: {query.shape[0]} vs {cloud.shape[0]}")
    out = np.empty(query.shape[:2])
    # chunk over frames to bound the (frames, Q, N) temporaries
    step = max(1, 2_000_000 // max(1, query.shape[1] * cloud.shape[1]))
    for s in range(0, query.shape[0], step):
        d = query[s:s + step, :, None, :] - cloud[s:s + step, None, :, :]
        sq = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
        out[s:s + step] = np.sqrt(sq.min(axis=-1))
    return out


def _future(seq, frames):
    if frames == "future":
        return slice(seq.past, seq.num_frames)
    if frames == "all":
        return slice(0, seq.num_frames)
    if frames == "past":
        return slice(0, seq.past)
    raise ValueError(f"unknown frame selection {frames!r}")


def contact_state(seq, body, mode="marker", shape=None, frames="future"):
    """C[i, j]: distance from contact point j to the nearest object point at frame i.

    Mesh mode ('marker') measures markers against the object point cloud;
    skeletal mode ('joint') measures joints against the object keypoints.
    """
    shape = shape if shape is not None else seq.shape
    if shape is None:
        raise ValueError("contact_state needs an object shape")
    sl = _future(seq, frames)
    joints = seq.human[sl]
    if mode == "marker":
        pts = shape.points
    elif mode == "joint":
        pts = shape.keypoint_positions if shape.keypoints.size else shape.points
    else:
        raise ValueError(f"unknown contact mode {mode!r}")
    if pts.shape[0] == 0:
        raise ValueError("object point cloud is empty")
    cloud = pose_points(pts, seq.obj_rot[sl], seq.obj_trans[sl])
    return min_distances(body.contact_points(joints, mode), cloud)


def penetration_depths(joints, skeleton, cloud):
    """Per object point penetration depth -min(sdf, 0): (F, N)."""
    return -np.minimum(body_sdf(joints, skeleton, cloud), 0.0)


def penetration_state(seq, body, shape=None, frames="future"):
    """P[i]: summed penetration depth of object points inside the body at frame i."""
    shape = shape if shape is not None else seq.shape
    if shape is None:
        raise ValueError("penetration_state needs an object shape")
    sl = _future(seq, frames)
    cloud = pose_points(shape.points, seq.obj_rot[sl], seq.obj_trans[sl])
    # sequential accumulation keeps the sum independent of numpy's pairwise blocking
    return np.cumsum(penetration_depths(seq.human[sl], body.skeleton, cloud), axis=-1)[..., -1]


def contact_norms(C):
    """l2 norm over frames of every contact-point column."""
    C = np.asarray(C, dtype=np.float64)
    return np.linalg.norm(C, axis=0)


def select_reference(C, eps_contact):
    """Ground (-1) when no column's norm is below eps_contact*sqrt(F), else the argmin.

    ``eps_contact`` is a per-frame distance; the column norm is an l2 over
    the F frames, hence the sqrt(F) scaling. Ties go to the lowest index.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] == 0:
        raise ShapeError(f"contact state must be (F, count>0), got {C.shape}")
    norms = contact_norms(C)
    threshold = eps_contact * np.sqrt(C.shape[0])
    j = int(np.argmin(norms))
    if norms[j] >= threshold:
        return GROUND
    return j
