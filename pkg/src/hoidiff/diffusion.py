"""Noise schedules, forward noising, clean-signal reverse steps and the
sampling loop with an optional correction hook.

Step indices run 0..T with beta_0 = 0, so alpha_bar_0 = 1 and the last
reverse step returns the clean estimate unchanged.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ShapeError, StepError, TrainingError

log = logging.getLogger(__name__)

# reference betas for a 1000-step linear schedule; shorter schedules rescale
_REF_STEPS = 1000
_REF_BETA = (1e-4, 0.02)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray  # (T + 1,), betas[0] == 0

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.shape[0] < 3:
            raise ConfigError("schedule needs T >= 2")
        if b[0] != 0.0 or np.any(b[1:] <= 0) or np.any(b[1:] >= 1):
            raise ConfigError("betas must satisfy beta_0 = 0 and beta_t in (0, 1)")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        a = 1.0 - b
        ab = np.cumprod(a)
        a.setflags(write=False)
        ab.setflags(write=False)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "alpha_bars", ab)

    @property
    def T(self):
        return self.betas.shape[0] - 1

    def sqrt_ab(self, t):
        return math.sqrt(self.alpha_bars[t])

    def sqrt_one_minus_ab(self, t):
        return math.sqrt(1.0 - self.alpha_bars[t])


def make_schedule(T, kind="linear", beta_start=None, beta_end=None):
    """Linear or cosine schedule over T steps.

    Linear defaults rescale the usual 1000-step range (1e-4, 0.02) by
    1000 / T so that alpha_bar_T is near zero for short schedules. Passing
    explicit endpoints uses them as-is.
    """
    if int(T) != T or T < 2:
        raise ConfigError(f"T must be an integer >= 2, got {T}")
    T = int(T)
    if kind == "linear":
        explicit = beta_start is not None or beta_end is not None
        scale = _REF_STEPS / T
        lo = _REF_BETA[0] * scale if beta_start is None else beta_start
        hi = min(_REF_BETA[1] * scale, 0.999) if beta_end is None else beta_end
        betas = np.linspace(lo, hi, T, dtype=np.float64)
    elif kind == "cosine":
        explicit = False
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
        ab = f / f[0]
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    sched = NoiseSchedule(np.concatenate([[0.0], betas]))
    if sched.alpha_bars[-1] >= 0.01:
        if not explicit:
            raise ConfigError(f"alpha_bar_T = {sched.alpha_bars[-1]:.3g} is not below 0.01")
        log.warning("schedule leaves alpha_bar_T = %.3g; x_T is far from pure noise", sched.alpha_bars[-1])
    return sched


def _coef(values, t, like):
    """Broadcastable coefficient for scalar or per-sample steps."""
    if isinstance(like, torch.Tensor):
        c = torch.as_tensor(values, dtype=like.dtype, device=like.device)[torch.as_tensor(t)]
        if c.ndim:
            c = c.reshape(c.shape + (1,) * (like.ndim - c.ndim))
        return c
    c = np.asarray(values)[np.asarray(t)]
    if np.ndim(c):
        c = c.reshape(np.shape(c) + (1,) * (np.ndim(like) - np.ndim(c)))
    return c


def q_sample(x0, t, schedule, noise):
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise; works on numpy arrays or tensors.

    ``t`` is a scalar step or one step per leading (batch) entry.
    """
    if tuple(x0.shape) != tuple(noise.shape):
        raise ShapeError(f"x0 {tuple(x0.shape)} and noise {tuple(noise.shape)} differ")
    tt = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
    if np.any(tt < 0) or np.any(tt > schedule.T):
        raise ValueError(f"step out of range [0, {schedule.T}]")
    a = _coef(np.sqrt(schedule.alpha_bars), t, x0)
    b = _coef(np.sqrt(1.0 - schedule.alpha_bars), t, x0)
    return a * x0 + b * noise


def reverse_step(x_t, t, denoiser, condition, schedule, noise):
    """One clean-signal reverse step; returns (x_tilde, x_{t-1})."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"reverse step needs t in [1, {schedule.T}], got {t}")
    x_tilde = denoiser(x_t, t, condition)
    if tuple(x_tilde.shape) != tuple(x_t.shape):
        raise ShapeError(f"denoiser returned {tuple(x_tilde.shape)} for input {tuple(x_t.shape)}")
    return x_tilde, renoise(x_tilde, t - 1, schedule, noise)


def renoise(x_tilde, t_prev, schedule, noise):
    if schedule.alpha_bars[t_prev] == 1.0:
        return x_tilde
    return schedule.sqrt_ab(t_prev) * x_tilde + schedule.sqrt_one_minus_ab(t_prev) * noise


def blend_features(x_tilde, x_hat, t, T, channels):
    """Affine blend x_tilde * t/T + x_hat * (1 - t/T) restricted to ``channels``.

    Written as x_hat + w (x_tilde - x_hat) so equal inputs pass through
    unchanged; the endpoints return either input exactly.
    """
    w = t / T
    out = x_tilde.clone() if isinstance(x_tilde, torch.Tensor) else np.array(x_tilde, copy=True)
    if w >= 1.0:
        return out
    if w <= 0.0:
        out[..., channels] = x_hat[..., channels]
        return out
    a = x_tilde[..., channels]
    b = x_hat[..., channels]
    out[..., channels] = b + w * (a - b)
    return out


def sample_with_correction(condition, denoiser, schedule, shape, corrector=None, seed=0,
                           object_channels=None):
    """Reverse diffusion from t = T down to 0 with an optional correction hook.

    Args:
        condition: passed through to ``denoiser`` and ``corrector``.
        denoiser: callable (x_t, t, condition) -> clean estimate.
        schedule: NoiseSchedule.
        shape: shape of x, e.g. (batch, frames, features).
        corrector: optional callable (x_tilde, t, T, condition) ->
            (x_hat or None, fired mask (batch,), list of reports).
        seed: seeds the torch generator that draws x_T and all re-noising.
        object_channels: feature slice the blend acts on (required with a corrector).

    Returns:
        (x_0, reports). ``reports`` is a flat list of the hook's per-step records.
    """
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(shape, generator=gen, dtype=torch.float32)
    reports = []
    T = schedule.T
    for t in range(T, -1, -1):
        x_tilde = denoiser(x, t, condition)
        if tuple(x_tilde.shape) != tuple(x.shape):
            raise StepError(t, ShapeError(f"denoiser returned {tuple(x_tilde.shape)} for {tuple(x.shape)}"))
        if corrector is not None:
            try:
                x_hat, fired, step_reports = corrector(x_tilde, t, T, condition)
            except Exception as exc:
                raise StepError(t, exc) from exc
            reports.extend(step_reports)
            if x_hat is not None and bool(np.any(fired)):
                blended = blend_features(x_tilde, x_hat, t, T, object_channels)
                mask = torch.as_tensor(np.asarray(fired), dtype=torch.bool)
                x_tilde = torch.where(mask.reshape((-1,) + (1,) * (x.ndim - 1)), blended, x_tilde)
        if t == 0:
            return x_tilde, reports
        noise = torch.randn(shape, generator=gen, dtype=torch.float32)
        x = renoise(x_tilde, t - 1, schedule, noise)
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class DiffusionLossWeights:
    human: float = 1.0
    obj: float = 0.1
    human_vel: float = 0.2
    obj_vel: float = 0.02


def _velocity(pred, last_past):
    seq = torch.cat([last_past[:, None, :], pred], dim=1)
    return seq[:, 1:] - seq[:, :-1]


def diffusion_losses(pred, target, last_past, num_joints, weights=DiffusionLossWeights(),
                     velocity="smooth"):
    """Disentangled reconstruction losses plus velocity regularisers.

    Args:
        pred, target: (B, F, 3J + 9) future features.
        last_past: (B, 3J + 9) features of the last observed frame; the
            velocity terms start from it.
        velocity: 'smooth' penalises the predicted frame-to-frame change;
            'match' penalises its difference from the target's change.

    Returns:
        dict of scalar tensors: human, obj, human_vel, obj_vel, total.
    """
    h = slice(0, 3 * num_joints)
    o = slice(3 * num_joints, 3 * num_joints + 9)
    err = (pred - target) ** 2
    l_h = err[..., h].mean()
    l_o = err[..., o].mean()
    v = _velocity(pred, last_past)
    if velocity == "match":
        v = v - _velocity(target, last_past)
    elif velocity != "smooth":
        raise ValueError(f"unknown velocity mode {velocity!r}")
    l_vh = (v[..., h] ** 2).mean()
    l_vo = (v[..., o] ** 2).mean()
    total = weights.human * l_h + weights.obj * l_o + weights.human_vel * l_vh + weights.obj_vel * l_vo
    return {"human": l_h, "obj": l_o, "human_vel": l_vh, "obj_vel": l_vo, "total": total}


def diffusion_batch_losses(model, batch, schedule, num_joints, t, noise, weights=DiffusionLossWeights(),
                           velocity="smooth"):
    """Losses of ``model`` on a batch noised at steps ``t`` with ``noise``."""
    past, future, shape_pts = batch["past"], batch["future"], batch["shape"]
    x_t = q_sample(future, t, schedule, noise)
    pred = model(x_t, t, past, shape_pts)
    return diffusion_losses(pred, future, past[:, -1], num_joints, weights, velocity)


def train_diffusion_step(model, optimizer, batch, schedule, num_joints, weights=DiffusionLossWeights(),
                         generator=None, velocity="smooth", t_min=0, grad_clip=1.0):
    """One optimisation step of a denoiser.

    ``batch`` is a dict with 'past' (B, H, D), 'future' (B, F, D) and
    'shape' (B, N, 3) tensors; ``model(x_t, t, past, shape)`` returns the
    clean estimate. Returns the losses as floats.
    """
    future = batch["future"]
    if future.shape[0] == 0:
        raise ValueError("empty batch")
    b = future.shape[0]
    t = torch.randint(t_min, schedule.T + 1, (b,), generator=generator)
    noise = torch.randn(future.shape, generator=generator, dtype=future.dtype)
    losses = diffusion_batch_losses(model, batch, schedule, num_joints, t, noise, weights, velocity)
    total = losses["total"]
    if not torch.isfinite(total):
        raise TrainingError(f"non-finite diffusion loss {total.item()} "
                            f"(parts: { {k: float(v.detach()) for k, v in losses.items()} })")
    optimizer.zero_grad()
    total.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return {k: float(v.detach()) for k, v in losses.items()}
