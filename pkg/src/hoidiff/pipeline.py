"""End-to-end plumbing: conditioning, the sampler around the diffusion loop,
and the training loops for the denoiser and the interaction predictor.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from . import rotations as R
from .core import HoiSequence, ObjectShape, flatten_state, object_slice
from .corrector import CorrectorConfig, InteractionCorrector
from .denoiser import DenoiserConfig, HoiDenoiser
from .diffusion import DiffusionLossWeights, make_schedule, sample_with_correction, train_diffusion_step
from .errors import ShapeError
from .features import FeatureCodec, fit_norm_stats, normalize, shift
from .predictor import (PredictorConfig, PredictorLossWeights, StgnnPredictor, future_object_mse,
                        prepare_predictor_batch, train_predictor_step)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Context:
    """Observed frames a forecast is conditioned on."""

    human: np.ndarray  # (H, J, 3)
    obj_rot: np.ndarray  # (H, 4)
    obj_trans: np.ndarray  # (H, 3)
    shape: ObjectShape
    fps: float = 30.0

    @classmethod
    def from_sequence(cls, seq, last=None):
        """The past frames of ``seq`` (or its final ``last`` frames)."""
        sl = slice(0, seq.past) if last is None else slice(seq.num_frames - last, seq.num_frames)
        return cls(seq.human[sl], seq.obj_rot[sl], seq.obj_trans[sl], seq.shape, seq.fps)

    @property
    def num_frames(self):
        return self.human.shape[0]

    def origin(self):
        o = self.human[-1, 0].copy()
        o[2] = 0.0
        return o

    def features(self, origin=None):
        """Raw (H, 3J + 9) features, optionally relative to a horizontal origin."""
        o = np.zeros(3) if origin is None else origin
        n = self.num_frames
        return np.concatenate([(self.human - o).reshape(n, -1), R.quat_to_rot6d(self.obj_rot),
                               self.obj_trans - o], axis=1)

    def join(self, future):
        """HoiSequence of these frames followed by ``future`` (a HoiSequence)."""
        return HoiSequence(np.concatenate([self.human, future.human]),
                           np.concatenate([self.obj_rot, future.obj_rot]),
                           np.concatenate([self.obj_trans, future.obj_trans]),
                           past=self.num_frames, future=future.num_frames, fps=self.fps, shape=self.shape)


@dataclass(eq=False)
class Condition:
    past: torch.Tensor  # (B, H, D) normalised
    shape_points: torch.Tensor  # (B, N, 3)
    contexts: List[Context]
    origins: List[np.ndarray]
    memory: Optional[torch.Tensor] = field(default=None, repr=False)

    @property
    def batch(self):
        return self.past.shape[0]


def build_condition(contexts, codec):
    origins = [c.origin() for c in contexts]
    past = np.stack([normalize(c.features(o), codec.stats) for c, o in zip(contexts, origins)])
    n = {c.shape.points.shape[0] for c in contexts}
    if len(n) != 1:
        raise ShapeError(f"batched shapes need equal point counts, got {sorted(n)}")
    pts = np.stack([c.shape.points for c in contexts])
    return Condition(torch.as_tensor(past, dtype=torch.float32), torch.as_tensor(pts, dtype=torch.float32),
                     list(contexts), origins)


class HoiGenerator:
    """Samples future HOIs from a trained denoiser, optionally with correction."""

    def __init__(self, denoiser, codec, schedule, future, predictor=None, body=None, corrector_cfg=None):
        self.denoiser = denoiser.eval()
        self.codec = codec
        self.schedule = schedule
        self.future = future
        self.corrector = None
        if predictor is not None:
            self.corrector = InteractionCorrector(predictor.eval(), body, codec, corrector_cfg or CorrectorConfig())

    def _denoise(self, x, t, cond):
        with torch.no_grad():
            if cond.memory is None:
                cond.memory = self.denoiser.encode_condition(cond.past, cond.shape_points)
            return self.denoiser.denoise(x, torch.full((x.shape[0],), t), cond.memory)

    def sample(self, contexts, seed=0, correct=True):
        """Forecasts (list of H + F frame HoiSequences) and the correction reports."""
        cond = build_condition(contexts, self.codec)
        hook = self.corrector if (correct and self.corrector is not None) else None
        shape = (cond.batch, self.future, self.codec.width)
        x0, reports = sample_with_correction(cond, self._denoise, self.schedule, shape, hook, seed,
                                             object_slice(self.codec.num_joints))
        feats = x0.double().numpy()
        out = []
        for ctx, o, f in zip(contexts, cond.origins, feats):
            fut = self.codec.decode(f, o, past=1, fps=ctx.fps, shape=ctx.shape)
            out.append(ctx.join(fut))
        return out, reports


# ---------------------------------------------------------------- training

def make_windows(seqs, past, future, stride):
    out = []
    n = past + future
    for s in seqs:
        for start in range(0, s.num_frames - n + 1, stride):
            out.append(s.frames(start, start + n, past=past))
    return out


def fit_codec(windows):
    canon = [shift(w, Context.from_sequence(w).origin()) for w in windows]
    return FeatureCodec(fit_norm_stats([flatten_state(c) for c in canon]), windows[0].num_joints)


def denoiser_tensors(windows, codec):
    feats = np.stack([codec.encode(w, origin=Context.from_sequence(w).origin()) for w in windows])
    H = windows[0].past
    return {
        "past": torch.as_tensor(feats[:, :H], dtype=torch.float32),
        "future": torch.as_tensor(feats[:, H:], dtype=torch.float32),
        "shape": torch.as_tensor(np.stack([w.shape.points for w in windows]), dtype=torch.float32),
    }


def train_denoiser(windows, codec, cfg=None, T=100, steps=2000, batch_size=64, lr=1e-3, seed=0,
                   weights=DiffusionLossWeights(), time_budget=None, log_every=200):
    """Train a denoiser on windows; returns (model, schedule, loss history)."""
    torch.manual_seed(seed)
    cfg = cfg or DenoiserConfig(num_joints=codec.num_joints, max_frames=windows[0].num_frames)
    model = HoiDenoiser(cfg)
    schedule = make_schedule(T)
    data = denoiser_tensors(windows, codec)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps, eta_min=lr * 0.05)
    gen = torch.Generator().manual_seed(seed)
    n = data["past"].shape[0]
    hist = []
    start = time.time()
    model.train()
    for step in range(steps):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        batch = {k: v[idx] for k, v in data.items()}
        losses = train_diffusion_step(model, opt, batch, schedule, codec.num_joints, weights, gen)
        sched.step()
        hist.append(losses["total"])
        if log_every and step % log_every == 0:
            log.info("denoiser step %d loss %.4f", step, losses["total"])
        if time_budget is not None and time.time() - start > time_budget:
            log.info("denoiser stopped at step %d on time budget", step)
            break
    model.eval()
    return model, schedule, hist


def train_predictor(windows, body, cfg=None, steps=1000, batch_size=64, lr=1e-3, seed=0,
                    weights=PredictorLossWeights(), use_contact=True, time_budget=None, eval_windows=None,
                    dtype=torch.float32):
    """Train the interaction predictor on clean windows; returns (model, history)."""
    torch.manual_seed(seed)
    if cfg is None:
        cfg = PredictorConfig(past=windows[0].past, future=windows[0].future,
                              num_nodes=body.num_contact_points("marker") + 1)
    model = StgnnPredictor(cfg).to(dtype)
    data = prepare_predictor_batch(windows, body, cfg, dtype)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps, eta_min=lr * 0.05)
    gen = torch.Generator().manual_seed(seed)
    n = data["graph"].shape[0]
    hist = []
    start = time.time()
    for step in range(steps):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        batch = {k: (v[idx] if k != "radii" else v) for k, v in data.items()}
        hist.append(train_predictor_step(model, opt, batch, weights, use_contact)["total"])
        sched.step()
        if time_budget is not None and time.time() - start > time_budget:
            break
    model.eval()
    if eval_windows is not None:
        ev = prepare_predictor_batch(eval_windows, body, cfg, dtype)
        log.info("predictor held-out future MSE %.3g", future_object_mse(model, ev))
    return model, hist
