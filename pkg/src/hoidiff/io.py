"""Sequence files, packed corpora and model checkpoints.

Sequence JSON layout (version ``interdiff-hoi/1``)::

    {"version": "interdiff-hoi/1", "fps": 30.0, "split": {"H": 10, "F": 25},
     "human": {"joints": [[[x, y, z], ...], ...]},
     "object": {"rot6d": [[...6], ...], "quat": [[w, x, y, z], ...], "trans": [[x, y, z], ...]},
     "shape": {"name": "box", "points": [[x, y, z], ...], "keypoints": [0, 1, ...]}}

Floats are written with ``repr`` precision so a load reproduces the saved
arrays bit for bit. ``quat`` carries the exact rotation; ``rot6d`` is the
network-facing form and must agree with it.
"""
import json
import os
import struct

import numpy as np
import torch

from . import rotations as R
from .core import HoiSequence, ObjectShape
from .errors import SequenceParseError, VersionError

FORMAT = "interdiff-hoi/1"
CORPUS_FORMAT = "hoidiff-npz/1"
CKPT_MAGIC = b"HOICKPT\0"
CKPT_VERSION = 1
_ROT_AGREE = 1e-6


# ---------------------------------------------------------------- sequences

def sequence_to_dict(seq):
    if seq.shape is None:
        raise ValueError("sequence has no object shape; the file format requires one")
    return {
        "version": FORMAT,
        "fps": seq.fps,
        "split": {"H": seq.past, "F": seq.future},
        "human": {"joints": seq.human.tolist()},
        "object": {
            "rot6d": R.quat_to_rot6d(seq.obj_rot).tolist(),
            "quat": seq.obj_rot.tolist(),
            "trans": seq.obj_trans.tolist(),
        },
        "shape": {
            "name": seq.shape.name,
            "points": seq.shape.points.tolist(),
            "keypoints": seq.shape.keypoints.tolist(),
        },
    }


def _get(d, key, path, field):
    if not isinstance(d, dict):
        raise SequenceParseError(f"expected an object at '{field}'", path, field)
    if key not in d:
        name = f"{field}.{key}" if field else key
        raise SequenceParseError(f"missing field '{name}'", path, name)
    return d[key]


def _array(value, shape_tail, path, field, dtype=np.float64):
    try:
        a = np.array(value, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise SequenceParseError(f"field '{field}' is not a numeric array: {exc}", path, field) from None
    if a.ndim != len(shape_tail) + 1 or tuple(a.shape[1:]) != tuple(shape_tail):
        raise SequenceParseError(f"field '{field}' has shape {a.shape}, expected (N, {shape_tail})", path, field)
    if dtype == np.float64 and not np.all(np.isfinite(a)):
        raise SequenceParseError(f"field '{field}' has non-finite values", path, field)
    return a


def sequence_from_dict(d, path=None):
    version = _get(d, "version", path, "")
    if version != FORMAT:
        raise VersionError(f"unsupported version {version!r}; expected {FORMAT!r}", path, "version")
    fps = _get(d, "fps", path, "")
    if not isinstance(fps, (int, float)) or isinstance(fps, bool) or not fps > 0:
        raise SequenceParseError("field 'fps' must be a positive number", path, "fps")
    split = _get(d, "split", path, "")
    H, F = _get(split, "H", path, "split"), _get(split, "F", path, "split")
    for name, v in (("split.H", H), ("split.F", F)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise SequenceParseError(f"field '{name}' must be an integer >= 1", path, name)
    try:
        joints = np.array(_get(_get(d, "human", path, ""), "joints", path, "human"), dtype=np.float64)
    except (TypeError, ValueError):
        raise SequenceParseError("field 'human.joints' is not a numeric array", path, "human.joints") from None
    if joints.ndim != 3 or joints.shape[2] != 3:
        raise SequenceParseError(f"field 'human.joints' has shape {joints.shape}, expected (T, J, 3)",
                                 path, "human.joints")
    obj = _get(d, "object", path, "")
    rot6 = _array(_get(obj, "rot6d", path, "object"), (6,), path, "object.rot6d")
    quat = _array(_get(obj, "quat", path, "object"), (4,), path, "object.quat")
    trans = _array(_get(obj, "trans", path, "object"), (3,), path, "object.trans")
    n = joints.shape[0]
    for name, a in (("object.rot6d", rot6), ("object.quat", quat), ("object.trans", trans)):
        if a.shape[0] != n:
            raise SequenceParseError(f"field '{name}' has {a.shape[0]} frames, human has {n}", path, name)
    if n != H + F:
        raise SequenceParseError(f"frame count {n} does not match split H + F = {H + F}", path, "split")
    if np.any(np.abs(np.linalg.norm(quat, axis=1) - 1.0) > 1e-9):
        raise SequenceParseError("field 'object.quat' holds non-unit quaternions", path, "object.quat")
    try:
        m6 = R.rot6d_to_matrix(rot6)
    except ValueError as exc:
        raise SequenceParseError(f"field 'object.rot6d': {exc}", path, "object.rot6d") from None
    if np.abs(m6 - R.quat_to_matrix(quat)).max() > _ROT_AGREE:
        raise SequenceParseError("fields 'object.rot6d' and 'object.quat' disagree", path, "object.rot6d")
    sh = _get(d, "shape", path, "")
    points = _array(_get(sh, "points", path, "shape"), (3,), path, "shape.points")
    if points.shape[0] == 0:
        raise SequenceParseError("field 'shape.points' is empty", path, "shape.points")
    try:
        keypoints = np.array(_get(sh, "keypoints", path, "shape"), dtype=np.int64).reshape(-1)
        name = _get(sh, "name", path, "shape")
        if not isinstance(name, str):
            raise TypeError("shape name must be a string")
        shape = ObjectShape(points, keypoints, name=name)
    except (TypeError, ValueError, IndexError) as exc:
        raise SequenceParseError(f"field 'shape': {exc}", path, "shape") from None
    try:
        return HoiSequence(joints, quat, trans, past=H, future=F, fps=fps, shape=shape)
    except ValueError as exc:
        raise SequenceParseError(str(exc), path, None) from None


def dumps_sequence(seq):
    return json.dumps(sequence_to_dict(seq))


def loads_sequence(text, path=None):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SequenceParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                                 path, None) from None
    return sequence_from_dict(d, path)


def save_sequence(seq, path):
    text = dumps_sequence(seq)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_sequence(path):
    with open(path) as fh:
        text = fh.read()
    return loads_sequence(text, str(path))


# ---------------------------------------------------------------- packed corpora

def save_corpus(seqs, path):
    """Pack many sequences into one .npz with the same fields as the JSON form."""
    if not seqs:
        raise ValueError("corpus is empty")
    frames = np.array([s.num_frames for s in seqs])
    joints = np.array([s.num_joints for s in seqs])
    npts = np.array([s.shape.points.shape[0] for s in seqs])
    nkey = np.array([s.shape.keypoints.shape[0] for s in seqs])
    np.savez(
        path,
        version=np.array(CORPUS_FORMAT),
        fps=np.array([s.fps for s in seqs]),
        split=np.array([[s.past, s.future] for s in seqs]),
        frames=frames, joints=joints, npts=npts, nkey=nkey,
        human=np.concatenate([s.human.reshape(-1) for s in seqs]),
        quat=np.concatenate([s.obj_rot for s in seqs]),
        trans=np.concatenate([s.obj_trans for s in seqs]),
        points=np.concatenate([s.shape.points for s in seqs]),
        keypoints=np.concatenate([s.shape.keypoints for s in seqs]),
        names=np.array([s.shape.name for s in seqs]),
    )


def load_corpus(path):
    try:
        z = np.load(path, allow_pickle=False)
    except Exception as exc:  # zipfile raises its own error types on damaged archives
        raise SequenceParseError(f"unreadable corpus: {exc}", str(path), None) from None
    with z:
        try:
            if str(z["version"]) != CORPUS_FORMAT:
                raise VersionError(f"unsupported corpus version {str(z['version'])!r}", str(path), "version")
            d = {k: z[k] for k in _CORPUS_FIELDS}
        except KeyError as exc:
            raise SequenceParseError(f"missing field {exc}", str(path), str(exc)) from None
        except VersionError:
            raise
        except Exception as exc:
            raise SequenceParseError(f"corrupt corpus: {exc}", str(path), None) from None
    try:
        return _unpack_corpus(d)
    except (ValueError, IndexError, TypeError) as exc:
        raise SequenceParseError(f"inconsistent corpus: {exc}", str(path), None) from None


_CORPUS_FIELDS = ("fps", "split", "frames", "joints", "npts", "nkey", "human", "quat", "trans", "points",
                  "keypoints", "names")


def _unpack_corpus(d):
    count = d["frames"].shape[0]
    for k in ("fps", "split", "joints", "npts", "nkey", "names"):
        if d[k].shape[0] != count:
            raise ValueError(f"field '{k}' has {d[k].shape[0]} entries for {count} clips")
    totals = {"human": int((d["frames"] * d["joints"]).sum() * 3), "quat": int(d["frames"].sum()),
              "trans": int(d["frames"].sum()), "points": int(d["npts"].sum()), "keypoints": int(d["nkey"].sum())}
    for k, n in totals.items():
        if d[k].shape[0] != n:
            raise ValueError(f"field '{k}' has {d[k].shape[0]} rows, expected {n}")
    out = []
    h = f = p = k = 0
    for i in range(count):
        T, J, N, K = int(d["frames"][i]), int(d["joints"][i]), int(d["npts"][i]), int(d["nkey"][i])
        human = d["human"][h:h + T * J * 3].reshape(T, J, 3)
        shape = ObjectShape(d["points"][p:p + N], d["keypoints"][k:k + K], name=str(d["names"][i]))
        H, F = (int(x) for x in d["split"][i])
        out.append(HoiSequence(human, d["quat"][f:f + T], d["trans"][f:f + T], H, F, float(d["fps"][i]), shape))
        h, f, p, k = h + T * J * 3, f + T, p + N, k + K
    return out


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, kind, config, state_dict, extra=None):
    """Binary checkpoint: magic, version (u32), header length (u64), JSON header, raw tensors.

    The header lists every tensor's name, dtype, shape, offset and byte size
    relative to the start of the data block.
    """
    index = []
    blobs = []
    offset = 0
    for name, t in state_dict.items():
        arr = t.detach().cpu().contiguous().numpy()
        raw = arr.tobytes()
        index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format": "hoidiff-ckpt/1", "kind": kind, "config": config,
                         "extra": extra or {}, "tensors": index}).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, kind=None):
    """Returns (header dict, state_dict of tensors)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise SequenceParseError("not a checkpoint file (bad magic)", str(path), None)
    if len(data) < 20:
        raise SequenceParseError("truncated checkpoint header", str(path), None)
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", str(path), "version")
    try:
        header = json.loads(data[20:20 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SequenceParseError(f"corrupt checkpoint header: {exc}", str(path), None) from None
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), list):
        raise SequenceParseError("checkpoint header lacks a tensor index", str(path), "tensors")
    if kind is not None and header.get("kind") != kind:
        raise SequenceParseError(f"checkpoint holds a {header.get('kind')!r}, expected {kind!r}", str(path), "kind")
    if len(data) < 20 + hlen:
        raise SequenceParseError("truncated checkpoint", str(path), None)
    body = data[20 + hlen:]
    state = {}
    for e in header["tensors"]:
        try:
            end = e["offset"] + e["nbytes"]
            if end > len(body):
                raise SequenceParseError(f"truncated tensor data for {e['name']}", str(path), e["name"])
            arr = np.frombuffer(body[e["offset"]:end], dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SequenceParseError):
                raise
            raise SequenceParseError(f"bad tensor entry: {exc}", str(path), "tensors") from None
        state[e["name"]] = torch.from_numpy(arr.copy())
    return header, state


def export_csv(seq, path):
    """One row per frame: frame, split flag, joint xyz..., quat wxyz, translation xyz."""
    J = seq.num_joints
    cols = ["frame", "is_future"] + [f"j{j}_{a}" for j in range(J) for a in "xyz"]
    cols += ["qw", "qx", "qy", "qz", "tx", "ty", "tz"]
    rows = np.concatenate([
        np.arange(seq.num_frames)[:, None], (np.arange(seq.num_frames) >= seq.past)[:, None],
        seq.human.reshape(seq.num_frames, -1), seq.obj_rot, seq.obj_trans], axis=1)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join([str(int(r[0])), str(int(r[1]))] + [repr(float(v)) for v in r[2:]]) + "\n")
