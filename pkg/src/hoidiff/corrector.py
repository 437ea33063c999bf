"""Correction scheduler and blending: decides, per reverse-diffusion step,
whether to replace the denoised object motion with the interaction
predictor's forecast, and mixes the two.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from . import rotations as R
from .contact import GROUND, contact_norms, contact_state, penetration_state, select_reference
from .core import object_slice
from .errors import ConfigError, ShapeError
from .predictor import interaction_predict_batch

TRIGGERS = ("penetration", "no_contact", "schedule_only", "none")


@dataclass
class CorrectorConfig:
    eps_penetration: float = 0.01
    eps_contact: float = 0.05
    late_fraction: float = 0.1
    stride: int = 2
    mode: str = "mesh"
    # reject a forecast that penetrates the body more than the sample it replaces
    guard: bool = True

    def __post_init__(self):
        if self.eps_penetration <= 0 or self.eps_contact <= 0:
            raise ConfigError("thresholds must be positive")
        if not 0 < self.late_fraction <= 1:
            raise ConfigError("late_fraction must lie in (0, 1]")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigError("stride must be an integer >= 1")
        if self.mode not in ("mesh", "skeletal"):
            raise ConfigError(f"mode must be 'mesh' or 'skeletal', got {self.mode!r}")

    @property
    def contact_mode(self):
        return "marker" if self.mode == "mesh" else "joint"


def in_window(t, T, cfg):
    return t <= cfg.late_fraction * T and t % cfg.stride == 0


def should_correct(P, C, t, T, cfg):
    """(fire, trigger) for one denoised HOI.

    Only late, stride-aligned steps are eligible. In mesh mode a step also
    needs existing penetration (||P|| > eps_penetration) or no contact (the
    smallest contact column RMS above eps_contact). Skeletal HOIs are gated
    by the step window alone.
    """
    if not in_window(t, T, cfg):
        return False, "none"
    if cfg.mode == "skeletal":
        return True, "schedule_only"
    P = np.asarray(P, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if np.linalg.norm(P) > cfg.eps_penetration:
        return True, "penetration"
    if contact_norms(C).min() > cfg.eps_contact * math.sqrt(C.shape[0]):
        return True, "no_contact"
    return False, "none"


def blend(x_tilde, x_hat, t, T):
    """Mix object motion: x_tilde * t/T + x_hat * (1 - t/T); human from x_tilde.

    Rotations are interpolated in 6D form and re-orthonormalised.
    """
    if x_tilde.human.shape != x_hat.human.shape or x_tilde.num_frames != x_hat.num_frames:
        raise ShapeError("blend inputs differ in shape")
    w = t / T
    if w >= 1.0:
        return x_tilde
    if w <= 0.0:
        return x_tilde.replace(obj_rot=x_hat.obj_rot, obj_trans=x_hat.obj_trans)
    a = np.concatenate([R.quat_to_rot6d(x_tilde.obj_rot), x_tilde.obj_trans], axis=1)
    b = np.concatenate([R.quat_to_rot6d(x_hat.obj_rot), x_hat.obj_trans], axis=1)
    mix = b + w * (a - b)
    return x_tilde.replace(obj_rot=R.rot6d_to_quat(mix[:, :6]), obj_trans=mix[:, 6:])


@dataclass
class CorrectionRecord:
    t: int
    sample: int
    fired: bool
    trigger: str
    s: Optional[int] = None
    p_norm: Optional[float] = None
    c_min: Optional[float] = None
    round: int = field(default=0)
    rejected: bool = False

    def to_json(self):
        return json.dumps(asdict(self))


def write_reports(path, reports):
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


class InteractionCorrector:
    """Correction hook for :func:`hoidiff.diffusion.sample_with_correction`.

    Decodes each denoised future, joins it to its observed past, measures
    contact and penetration, and for samples the scheduler accepts returns
    the predictor's re-anchored object motion as normalised features.

    ``scheduler`` defaults to :func:`should_correct`; tests swap in stubs.
    ``predict`` may replace the predictor call: (seqs, refs) -> seqs.
    """

    def __init__(self, predictor, body, codec, cfg=None, scheduler=None, predict=None):
        self.predictor = predictor
        self.body = body
        self.codec = codec
        self.cfg = cfg or CorrectorConfig()
        self.scheduler = scheduler or should_correct
        self.predict = predict
        self.round = 0

    def __call__(self, x_tilde, t, T, condition):
        b = x_tilde.shape[0]
        cfg = self.cfg
        if not in_window(t, T, cfg):
            return None, np.zeros(b, dtype=bool), [
                CorrectionRecord(t, i, False, "none", round=self.round) for i in range(b)]
        seqs = decode_batch(self.codec, x_tilde, condition)
        fired = np.zeros(b, dtype=bool)
        refs = [GROUND] * b
        reports = []
        for i, seq in enumerate(seqs):
            C = contact_state(seq, self.body, cfg.contact_mode)
            P = penetration_state(seq, self.body) if cfg.mode == "mesh" else np.zeros(seq.future)
            fire, trigger = self.scheduler(P, C, t, T, cfg)
            s = select_reference(C, cfg.eps_contact)
            fired[i] = fire
            refs[i] = s
            reports.append(CorrectionRecord(t, i, bool(fire), trigger, int(s), float(np.linalg.norm(P)),
                                            float(contact_norms(C).min() / math.sqrt(C.shape[0])),
                                            round=self.round))
        if not fired.any():
            return None, fired, reports
        idx = np.nonzero(fired)[0]
        chosen = [seqs[i] for i in idx]
        if self.predict is not None:
            preds = self.predict(chosen, [refs[i] for i in idx])
        else:
            preds = interaction_predict_batch(chosen, [refs[i] for i in idx], self.predictor, self.body)
        x_hat = x_tilde.clone()
        for i, pred in zip(idx, preds):
            if cfg.guard and cfg.mode == "mesh" and (
                    np.linalg.norm(penetration_state(pred, self.body)) > reports[i].p_norm):
                fired[i] = False
                reports[i].fired = False
                reports[i].rejected = True
                continue
            fut = pred.frames(pred.past, pred.num_frames, past=1)
            x_hat[i] = torch.as_tensor(
                self.codec.encode(fut, origin=condition.origins[i]), dtype=x_tilde.dtype)
        return x_hat, fired, reports


def decode_batch(codec, x, condition):
    """Join each decoded future (B, F, D) to its observed context: list of HoiSequence."""
    feats = x.detach().double().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)
    out = []
    for ctx, origin, f in zip(condition.contexts, condition.origins, feats):
        out.append(ctx.join(codec.decode(f, origin, past=1, fps=ctx.fps)))
    return out


def object_channels(num_joints):
    return object_slice(num_joints)
