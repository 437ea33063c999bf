"""Per-feature normalisation statistics and the network-facing codec.

The codec moves a sequence into a canonical horizontal origin (the root
joint's ground projection at the last observed frame), flattens it and
normalises every feature.
"""
from dataclasses import dataclass

import numpy as np

from .core import feature_width, flatten_state, unflatten_state
from .errors import ShapeError

_MIN_STD = 1e-8


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # features whose variance was ~0; std forced to 1

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "degenerate": self.degenerate.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["degenerate"], dtype=bool))


def fit_norm_stats(corpus):
    """Mean/std over every frame of a corpus.

    ``corpus`` is a (frames, D) array or an iterable of such arrays.
    """
    if isinstance(corpus, np.ndarray):
        data = corpus.reshape(-1, corpus.shape[-1])
    else:
        parts = [np.asarray(c, dtype=np.float64) for c in corpus]
        if not parts:
            raise ValueError("corpus is empty")
        data = np.concatenate([p.reshape(-1, p.shape[-1]) for p in parts])
    if data.shape[0] == 0:
        raise ValueError("corpus is empty")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    degenerate = std < _MIN_STD
    std = np.where(degenerate, 1.0, std)
    return NormStats(mean, std, degenerate)


def normalize(features, stats):
    return (features - stats.mean) / stats.std


def denormalize(features, stats):
    return features * stats.std + stats.mean


def canonical_origin(seq, frame=None):
    """Ground projection of the root joint at ``frame`` (default: last past frame)."""
    frame = seq.past - 1 if frame is None else frame
    o = seq.human[frame, 0].copy()
    o[2] = 0.0
    return o


def shift(seq, offset):
    """Translate human and object by ``-offset``."""
    return seq.replace(human=seq.human - offset, obj_trans=seq.obj_trans - offset)


class FeatureCodec:
    """HoiSequence <-> normalised (T, 3J + 9) features around a canonical origin."""

    def __init__(self, stats, num_joints):
        if stats.mean.shape != (feature_width(num_joints),):
            raise ShapeError(f"stats width {stats.mean.shape} does not match J={num_joints}")
        self.stats = stats
        self.num_joints = num_joints

    @property
    def width(self):
        return feature_width(self.num_joints)

    def encode(self, seq, origin=None):
        origin = canonical_origin(seq) if origin is None else origin
        return normalize(flatten_state(shift(seq, origin)), self.stats)

    def decode(self, features, origin, past, fps=30.0, shape=None):
        raw = denormalize(np.asarray(features, dtype=np.float64), self.stats)
        seq = unflatten_state(raw, self.num_joints, past=past, fps=fps, shape=shape)
        return shift(seq, -np.asarray(origin))

    def to_dict(self):
        return {"num_joints": self.num_joints, "stats": self.stats.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(NormStats.from_dict(d["stats"]), d["num_joints"])
