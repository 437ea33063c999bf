"""Best-of-Many evaluation and autoregressive long-horizon rollouts."""
import math
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .core import HoiSequence
from .errors import CandidateError, RolloutError
from .metrics import MetricsReport, evaluate


@dataclass
class BestOfMany:
    best: Dict[str, float]
    candidates: List[MetricsReport]


def best_from_reports(reports, n=None):
    """Per-metric minimum over the first ``n`` candidate reports."""
    reports = reports if n is None else reports[:n]
    if not reports:
        raise ValueError("need at least one candidate")
    keys = MetricsReport.FIELDS
    return {k: float(np.nanmin([getattr(r, k) for r in reports])) if not all(
        math.isnan(getattr(r, k)) for r in reports) else float("nan") for k in keys}


def best_of_many(sampler, ground_truth, n_samples, seed, body, mode="mesh"):
    """Draw candidates with seeds seed, seed + 1, ... and keep each metric's minimum.

    ``sampler(seed)`` returns a HoiSequence aligned with ``ground_truth``.
    Candidate sets are nested: the first k candidates do not depend on
    ``n_samples``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    reports = []
    for i in range(n_samples):
        try:
            cand = sampler(seed + i)
            reports.append(evaluate(cand, ground_truth, body, mode))
        except Exception as exc:
            raise CandidateError(i, exc) from exc
    return BestOfMany(best_from_reports(reports), reports)


def _crossfade(prev, new, frames):
    """Spread the seam jump over the first ``frames`` frames of a new round.

    The jump is measured against a constant-velocity extrapolation of the
    previous round.
    """
    if frames <= 0 or prev.shape[0] < 2:
        return new
    target = prev[-1] + (prev[-1] - prev[-2])
    delta = target - new[0]
    w = np.clip(1.0 - np.arange(new.shape[0]) / frames, 0.0, 1.0)
    return new + w.reshape((-1,) + (1,) * (new.ndim - 1)) * delta


def autoregressive_rollout(sampler, initial_past, total_frames, crossfade=0):
    """Chain forecasts until ``total_frames`` future frames exist.

    ``sampler(context_sequence)`` receives a HoiSequence whose past frames are
    the context (the future half is a placeholder and must be ignored) and
    returns a HoiSequence with the same past followed by F new frames. Each
    round conditions on the last H frames produced so far. The result keeps
    the initial past followed by exactly ``total_frames`` forecast frames.

    On failure a RolloutError carries the frames finished so far.
    """
    out = rollout_batch(lambda ctxs: [sampler(ctxs[0])], [initial_past], total_frames, crossfade)
    return out[0]


def rollout_batch(sampler, initial_pasts, total_frames, crossfade=0):
    """Batched form of autoregressive_rollout: ``sampler`` maps a list of
    context sequences to a list of forecasts, one round at a time."""
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    if not initial_pasts:
        raise ValueError("need at least one initial sequence")
    H = initial_pasts[0].past
    if any(s.past != H for s in initial_pasts):
        raise ValueError("all initial sequences need the same past length")
    tracks = [([s.human[:H]], [s.obj_rot[:H]], [s.obj_trans[:H]]) for s in initial_pasts]
    made = 0
    rnd = 0
    while made < total_frames:
        ctxs = [_context(h, r, t, H, s) for (h, r, t), s in zip(tracks, initial_pasts)]
        try:
            outs = sampler(ctxs)
            if len(outs) != len(ctxs):
                raise ValueError(f"sampler returned {len(outs)} forecasts for {len(ctxs)} contexts")
            for out in outs:
                if out.past != H:
                    raise ValueError(f"sampler returned past={out.past}, expected {H}")
        except Exception as exc:
            partial = None
            if made:
                partial = [_assemble(h, r, t, H, s) for (h, r, t), s in zip(tracks, initial_pasts)]
                partial = partial[0] if len(partial) == 1 else partial
            raise RolloutError(rnd, partial, exc) from exc
        take = min(min(o.future for o in outs), total_frames - made)
        for (human, rot, trans), out in zip(tracks, outs):
            h_new = out.human[H:H + take]
            t_new = out.obj_trans[H:H + take]
            if crossfade and made:
                h_new = _crossfade(np.concatenate(human), h_new, crossfade)
                t_new = _crossfade(np.concatenate(trans), t_new, crossfade)
            human.append(h_new)
            rot.append(out.obj_rot[H:H + take])
            trans.append(t_new)
        made += take
        rnd += 1
    return [_assemble(h, r, t, H, s) for (h, r, t), s in zip(tracks, initial_pasts)]


def _context(human, rot, trans, H, ref):
    """Last H frames as the past of a sequence padded with one repeated frame."""
    h, r, t = np.concatenate(human)[-H:], np.concatenate(rot)[-H:], np.concatenate(trans)[-H:]
    return HoiSequence(np.concatenate([h, h[-1:]]), np.concatenate([r, r[-1:]]), np.concatenate([t, t[-1:]]),
                       past=H, future=1, fps=ref.fps, shape=ref.shape)


def _assemble(human, rot, trans, H, ref):
    h = np.concatenate(human)
    return HoiSequence(h, np.concatenate(rot), np.concatenate(trans), past=H, future=h.shape[0] - H,
                       fps=ref.fps, shape=ref.shape)


def rollout_rounds(total_frames, future):
    return math.ceil(total_frames / future)
