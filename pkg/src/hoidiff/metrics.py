"""Forecast metrics on the future frames of a prediction.

Distances are reported in millimetres, quaternion error as 1000 times the
mean l1 distance (sign-invariant), and penetration as a vertex fraction
alongside the same fraction in units of 1e-2 percent.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .body import body_sdf
from .errors import NotApplicableError, ShapeError

PENE_SCALE = 1e4  # fraction -> units of 1e-2 %


def _mean_dist_mm(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.shape[-1] != 3:
        raise ShapeError(f"expected points with 3 coordinates, got {pred.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 1000.0)


def mpjpe(pred_joints, gt_joints):
    """Mean per-joint position error in mm."""
    return _mean_dist_mm(pred_joints, gt_joints)


def mpjpe_o(pred_keypoints, gt_keypoints):
    return _mean_dist_mm(pred_keypoints, gt_keypoints)


def trans_err(pred_trans, gt_trans):
    return _mean_dist_mm(pred_trans, gt_trans)


def rot_err(pred_quats, gt_quats, tol=1e-6):
    """1000 x mean over frames of min(|p - g|_1, |p + g|_1)."""
    p = np.asarray(pred_quats, dtype=np.float64)
    g = np.asarray(gt_quats, dtype=np.float64)
    if p.shape != g.shape or p.shape[-1] != 4:
        raise ShapeError(f"quaternion arrays must match and end in 4, got {p.shape} and {g.shape}")
    for name, q in (("prediction", p), ("ground truth", g)):
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > tol):
            raise ValueError(f"{name} contains non-unit quaternions")
    d = np.minimum(np.abs(p - g).sum(-1), np.abs(p + g).sum(-1))
    return float(d.mean() * 1000.0)


def penetration_fraction(joints, skeleton, points):
    """Mean over frames of the fraction of object points with sdf < 0."""
    sdf = body_sdf(joints, skeleton, points)
    return float((sdf < 0).mean(axis=-1).mean())


def pene_metric(seq, body, mode="mesh", frames="future"):
    """(raw fraction, scaled value in units of 1e-2 %) for a sequence.

    ``frames`` is "future", "all" or an explicit slice.
    """
    if mode != "mesh":
        raise NotApplicableError("penetration is only defined for mesh-represented HOIs")
    if isinstance(frames, slice):
        sl = frames
    else:
        sl = slice(seq.past, None) if frames == "future" else slice(None)
    frac = penetration_fraction(seq.human[sl], body.skeleton, seq.object_points()[sl])
    return frac, frac * PENE_SCALE


@dataclass
class MetricsReport:
    mpjpe_h: float
    mpjpe_o: float
    trans_err: float
    rot_err: float
    pene: float = float("nan")
    pene_fraction: float = float("nan")

    FIELDS = ("mpjpe_h", "mpjpe_o", "trans_err", "rot_err", "pene")

    def to_dict(self):
        return asdict(self)

    def values(self):
        return {k: getattr(self, k) for k in self.FIELDS}


def evaluate(pred, gt, body, mode="mesh"):
    """Metrics of pred against gt over the future frames (splits must agree)."""
    if (pred.past, pred.future) != (gt.past, gt.future) or pred.num_joints != gt.num_joints:
        raise ShapeError(f"prediction split/joints ({pred.past}, {pred.future}, {pred.num_joints}) "
                         f"!= ground truth ({gt.past}, {gt.future}, {gt.num_joints})")
    sl = slice(gt.past, None)
    shape = gt.shape if gt.shape is not None else pred.shape
    p = pred if pred.shape is not None else pred.replace(shape=shape)
    g = gt if gt.shape is not None else gt.replace(shape=shape)
    report = MetricsReport(
        mpjpe_h=mpjpe(p.human[sl], g.human[sl]),
        mpjpe_o=mpjpe_o(p.object_points(keypoints=True)[sl], g.object_points(keypoints=True)[sl]),
        trans_err=trans_err(p.obj_trans[sl], g.obj_trans[sl]),
        rot_err=rot_err(p.obj_rot[sl], g.obj_rot[sl]),
    )
    if mode == "mesh":
        report.pene_fraction, report.pene = pene_metric(p, body)
    return report


def mean_report(reports):
    keys = ("mpjpe_h", "mpjpe_o", "trans_err", "rot_err", "pene", "pene_fraction")
    return MetricsReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys})
