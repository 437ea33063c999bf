"""Interaction predictor: object motion under every reference system is
padded with its last observed frame, moved to a truncated DCT basis,
refined by residual graph convolutions over the reference nodes, and mapped
back to time. The node of the selected reference is then re-anchored in
world coordinates.
"""
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import frames as F_
from . import rotations as R
from .contact import GROUND, contact_state, select_reference
from .core import flatten_state, object_slice
from .errors import ShapeError, TrainingError


def dct_matrix(n, m=None):
    """Orthonormal DCT-II basis, rows are bases: (m, n)."""
    m = n if m is None else m
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= bases <= frames, got {m} bases for {n} frames")
    k = np.arange(m)[:, None]
    i = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    c[0] /= np.sqrt(2.0)
    return c


def dct_forward(track, basis):
    """Coefficients (m, ...) of a track whose first axis is time."""
    track = np.asarray(track, dtype=np.float64)
    if track.shape[0] != basis.shape[1]:
        raise ShapeError(f"track has {track.shape[0]} frames, basis expects {basis.shape[1]}")
    return np.tensordot(basis, track, axes=(1, 0))


def dct_inverse(coeffs, basis):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[0] != basis.shape[0]:
        raise ShapeError(f"got {coeffs.shape[0]} coefficients, basis has {basis.shape[0]}")
    return np.tensordot(basis.T, coeffs, axes=(1, 0))


@dataclass
class PredictorConfig:
    past: int = 10
    future: int = 25
    num_nodes: int = 17
    dct_bases: int = 10
    blocks: int = 4
    width: int = 64
    contact_mode: str = "marker"
    orientation_mode: str = "translation_only"
    relative: bool = True
    eps_contact: float = 0.05
    loss_points: int = 32  # object points used by the contact and penetration losses (0 = all)

    def to_dict(self):
        return asdict(self)


class GraphBlock(nn.Module):
    def __init__(self, nodes, width):
        super().__init__()
        self.adj = nn.Parameter(torch.eye(nodes) * 0.5 + 0.5 / nodes)
        self.lin1 = nn.Linear(width, width)
        self.lin2 = nn.Linear(width, width)
        self.norm = nn.LayerNorm(width)
        self.act = nn.GELU()

    def forward(self, h):
        # h: (B, N, W); mix nodes through the dense adjacency, then features
        y = torch.einsum("nm,bmw->bnw", self.adj, self.lin1(self.norm(h)))
        return h + self.lin2(self.act(y))


class StgnnPredictor(nn.Module):
    """Frequency-domain graph network over (frames, nodes, 9) object features.

    The output is the last-frame-padded input plus an inverse-DCT correction,
    and the correction head starts at zero, so an untrained model holds the
    last observed frame.
    """

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or PredictorConfig()
        self.cfg = cfg
        n = cfg.past + cfg.future
        self.register_buffer("basis", torch.tensor(dct_matrix(n, cfg.dct_bases), dtype=torch.float32))
        d_in = cfg.dct_bases * 9 + 9
        self.node_emb = nn.Parameter(torch.zeros(cfg.num_nodes, cfg.width))
        self.inp = nn.Linear(d_in, cfg.width)
        self.blocks = nn.ModuleList(GraphBlock(cfg.num_nodes, cfg.width) for _ in range(cfg.blocks))
        self.out = nn.Linear(cfg.width, cfg.dct_bases * 9)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def pad(self, past):
        last = past[:, -1:]
        return torch.cat([past, last.expand(-1, self.cfg.future, -1, -1)], dim=1)

    def forward(self, past):
        """past: (B, H, N, 9) -> (B, H + F, N, 9) recovered past and future."""
        b, h, n, d = past.shape
        if h != self.cfg.past or n != self.cfg.num_nodes or d != 9:
            raise ShapeError(f"expected (B, {self.cfg.past}, {self.cfg.num_nodes}, 9) graph, got {tuple(past.shape)}")
        basis = self.basis.to(past.dtype)
        padded = self.pad(past)
        last = past[:, -1]
        coeffs = torch.einsum("mt,btnd->bnmd", basis, padded - last[:, None])
        x = torch.cat([coeffs.reshape(b, n, -1), last], dim=-1)
        hid = self.inp(x) + self.node_emb.to(past.dtype)
        for blk in self.blocks:
            hid = blk(hid)
        delta = self.out(hid).reshape(b, n, self.cfg.dct_bases, 9)
        return padded + torch.einsum("mt,bnmd->btnd", basis, delta)


def predict_relative(graph, model):
    """Future node features (F, nodes, 9) from a past-frame StGraph."""
    if graph.num_nodes != model.cfg.num_nodes:
        raise ShapeError(f"graph has {graph.num_nodes} nodes, model expects {model.cfg.num_nodes}")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(graph.features, dtype=dtype)[None])[0]
    fut = out[model.cfg.past:].double().numpy()
    return F_.StGraph(fut, graph.orientation_mode)


def _world_features(seq):
    return flatten_state(seq)[:, object_slice(seq.num_joints)]


def interaction_predict_batch(seqs, refs, model, body):
    """Batched :func:`interaction_predict`; returns new sequences."""
    cfg = model.cfg
    graphs, anchor_tracks, frame_tracks = [], [], []
    for seq in seqs:
        if seq.past != cfg.past or seq.future != cfg.future:
            raise ShapeError(f"sequence split ({seq.past}, {seq.future}) != model ({cfg.past}, {cfg.future})")
        world = _world_features(seq)
        anchors, fr = F_.reference_tracks(seq.human, body, cfg.contact_mode, cfg.orientation_mode)
        if anchors.shape[1] + 1 != cfg.num_nodes:
            raise ShapeError(f"body gives {anchors.shape[1] + 1} nodes, model expects {cfg.num_nodes}")
        graphs.append(F_.graph_features(world[:cfg.past], anchors[:cfg.past],
                                        None if fr is None else fr[:cfg.past], cfg.relative))
        anchor_tracks.append(anchors)
        frame_tracks.append(fr)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(np.stack(graphs), dtype=dtype)).double().numpy()
    results = []
    for seq, s, out_i, anchors, fr in zip(seqs, refs, out, anchor_tracks, frame_tracks):
        if not GROUND <= s < cfg.num_nodes - 1:
            raise IndexError(f"reference {s} out of range for {cfg.num_nodes - 1} contact points")
        fut = out_i[cfg.past:, s + 1]
        if s != GROUND and cfg.relative:
            sl = slice(cfg.past, None)
            fut = F_.features_from_reference(fut, anchors[sl, s], None if fr is None else fr[sl, s])
        rot = R.rot6d_to_quat(fut[:, :6])
        results.append(seq.replace(obj_rot=np.concatenate([seq.obj_rot[:cfg.past], rot]),
                                   obj_trans=np.concatenate([seq.obj_trans[:cfg.past], fut[:, 6:]])))
    return results


def interaction_predict(x_tilde, s, model, body):
    """Replace the future object motion of a denoised HOI with the predictor's
    forecast under reference ``s`` (-1 = ground), mapped back to world.

    Human motion is returned unchanged.
    """
    return interaction_predict_batch([x_tilde], [s], model, body)[0]


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class PredictorLossWeights:
    obj: float = 1.0
    obj_vel: float = 0.1
    contact: float = 1.0
    penetration: float = 0.1


def rot6d_to_matrix_t(r):
    a1, a2 = r[..., :3], r[..., 3:]
    b1 = a1 / a1.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = u2 / u2.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    return torch.stack([b1, b2, torch.cross(b1, b2, dim=-1)], dim=-1)


def segment_distance_sq_t(points, a, b):
    """Squared distance, points (..., N, 3) to segments (..., S, 3) -> (..., N, S).

    Expanded with inner products so no (..., N, S, 3) tensor is formed.
    """
    ab = b - a
    ab2 = (ab * ab).sum(-1).clamp_min(1e-12)[..., None, :]
    p_ab = points @ ab.transpose(-1, -2)
    p_a = points @ a.transpose(-1, -2)
    a_ab = (a * ab).sum(-1)[..., None, :]
    ap_ab = p_ab - a_ab
    ap2 = (points * points).sum(-1)[..., :, None] - 2 * p_a + (a * a).sum(-1)[..., None, :]
    t = (ap_ab / ab2).clamp(0.0, 1.0)
    return (ap2 - 2 * t * ap_ab + t * t * ab2).clamp_min(0.0)


def segment_distance_t(points, a, b):
    """points (..., N, 3), segments (..., S, 3) -> (..., N, S)."""
    return segment_distance_sq_t(points, a, b).clamp_min(1e-18).sqrt()


def loss_point_subset(shape, count):
    """Keypoints first, then evenly strided remaining points, ``count`` in total."""
    n = shape.points.shape[0]
    if count <= 0 or count >= n:
        return shape.points
    key = [int(k) for k in shape.keypoints[:count]]
    rest = [i for i in range(n) if i not in set(key)]
    extra = np.asarray(rest)[np.linspace(0, len(rest) - 1, count - len(key)).round().astype(int)] if count > len(key) else []
    return shape.points[np.concatenate([np.asarray(key, dtype=np.int64), np.asarray(extra, dtype=np.int64)])]


def prepare_predictor_batch(seqs, body, cfg, dtype=torch.float32):
    """Precompute everything the predictor losses need for clean clips."""
    if not seqs:
        raise ValueError("empty batch")
    graphs, anchors_l, frames_l, refs, world, markers, near, seg_a, seg_b, pts = ([] for _ in range(10))
    sk = body.skeleton
    for seq in seqs:
        if seq.past != cfg.past or seq.future != cfg.future:
            raise ShapeError(f"clip split ({seq.past}, {seq.future}) != ({cfg.past}, {cfg.future})")
        w = _world_features(seq)
        anchors, fr = F_.reference_tracks(seq.human, body, cfg.contact_mode, cfg.orientation_mode)
        graphs.append(F_.graph_features(w[:cfg.past], anchors[:cfg.past],
                                        None if fr is None else fr[:cfg.past], cfg.relative))
        C = contact_state(seq, body, cfg.contact_mode)
        s = select_reference(C, cfg.eps_contact)
        refs.append(s)
        anchors_l.append(anchors[:, max(s, 0)] if (s != GROUND and cfg.relative) else np.zeros((seq.num_frames, 3)))
        if fr is not None and s != GROUND and cfg.relative:
            frames_l.append(fr[:, s])
        else:
            frames_l.append(np.broadcast_to(np.eye(3), (seq.num_frames, 3, 3)))
        world.append(w)
        mk = body.marker_positions(seq.human)
        markers.append(mk)
        near.append(contact_state(seq, body, "marker", frames="all") < cfg.eps_contact)
        seg_a.append(seq.human[:, sk.bone_parent])
        seg_b.append(seq.human[:, sk.bone_child])
        pts.append(loss_point_subset(seq.shape, cfg.loss_points))
    t = lambda x: torch.as_tensor(np.stack(x), dtype=dtype)  # noqa: E731
    return {
        "graph": t(graphs), "anchor": t(anchors_l), "frames": t(frames_l), "ref": torch.tensor(refs),
        "world": t(world), "markers": t(markers), "near": torch.as_tensor(np.stack(near)),
        "seg_a": t(seg_a), "seg_b": t(seg_b), "radii": torch.tensor(np.array(sk.capsule_radii), dtype=dtype),
        "points": t(pts),
    }


def predictor_losses(model, batch, weights=PredictorLossWeights(), use_contact=True, velocity="smooth"):
    """Object, velocity, contact and penetration losses on the selected node.

    The selected node's recovered past and future are mapped back to world
    and compared to the ground truth over all H + F frames.
    """
    out = model(batch["graph"])  # (B, T, N, 9)
    ref = batch["ref"]
    idx = (ref + 1).reshape(-1, 1, 1, 1).expand(-1, out.shape[1], 1, 9)
    sel = torch.gather(out, 2, idx)[:, :, 0]
    fr = batch["frames"]
    c1 = torch.einsum("btij,btj->bti", fr, sel[..., :3])
    c2 = torch.einsum("btij,btj->bti", fr, sel[..., 3:6])
    tr = torch.einsum("btij,btj->bti", fr, sel[..., 6:]) + batch["anchor"]
    pred = torch.cat([c1, c2, tr], dim=-1)
    gt = batch["world"]
    l_o = ((pred - gt) ** 2).mean()
    v = pred[:, 1:] - pred[:, :-1]
    if velocity == "match":
        v = v - (gt[:, 1:] - gt[:, :-1])
    l_vo = (v ** 2).mean()
    zero = pred.new_zeros(())
    l_c, l_p = zero, zero
    if use_contact:
        rot = rot6d_to_matrix_t(pred[..., :6])
        posed = torch.einsum("btij,bnj->btni", rot, batch["points"]) + pred[..., None, 6:]
        diff = batch["markers"][..., :, None, :] - posed[..., None, :, :]
        d = (diff * diff).sum(-1).min(dim=-1).values.clamp_min(1e-18).sqrt()
        near = batch["near"].to(d.dtype)
        l_c = (d * near).sum() / near.sum().clamp_min(1.0)
        sdf = (segment_distance_t(posed, batch["seg_a"], batch["seg_b"]) - batch["radii"]).min(dim=-1).values
        l_p = torch.relu(-sdf).sum(dim=-1).mean()
    total = weights.obj * l_o + weights.obj_vel * l_vo + weights.contact * l_c + weights.penetration * l_p
    return {"obj": l_o, "obj_vel": l_vo, "contact": l_c, "penetration": l_p, "total": total, "pred": pred}


def train_predictor_step(model, optimizer, batch, weights=PredictorLossWeights(), use_contact=True,
                         velocity="smooth", grad_clip=1.0):
    losses = predictor_losses(model, batch, weights, use_contact, velocity)
    total = losses["total"]
    if not torch.isfinite(total):
        raise TrainingError(f"non-finite predictor loss {float(total.detach())}")
    optimizer.zero_grad()
    total.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return {k: float(v.detach()) for k, v in losses.items() if k != "pred"}


def future_object_mse(model, batch):
    """MSE of predicted vs true world object features over the future frames."""
    with torch.no_grad():
        pred = predictor_losses(model, batch, use_contact=False)["pred"]
    f = model.cfg.past
    return float(((pred[:, f:] - batch["world"][:, f:]) ** 2).mean())


def clip_windows(seq, length, stride):
    """Sliding windows of a long clip, each split at the original past length."""
    out = []
    for start in range(0, seq.num_frames - length + 1, stride):
        out.append(seq.frames(start, start + length, past=seq.past))
    return out

