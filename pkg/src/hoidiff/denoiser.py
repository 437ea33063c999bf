"""Conditional transformer denoiser: a transformer encoder over the observed
frames (with the object shape embedding added to every token) and a
transformer decoder over the noised future that cross-attends to it.
"""
import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass
class DenoiserConfig:
    num_joints: int = 21
    latent_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    dropout: float = 0.1
    ff_mult: int = 2
    max_frames: int = 64
    point_hidden: int = 64
    zero_init_head: bool = True

    def __post_init__(self):
        if self.latent_dim % self.heads:
            raise ConfigError(f"latent_dim {self.latent_dim} not divisible by heads {self.heads}")

    @property
    def feature_dim(self):
        return 3 * self.num_joints + 9

    @classmethod
    def preset(cls, name, **kw):
        presets = {
            "desk": {},
            "paper": dict(latent_dim=256, encoder_layers=8, decoder_layers=8, heads=4, ff_mult=4),
        }
        if name not in presets:
            raise ConfigError(f"unknown denoiser preset {name!r}")
        return cls(**{**presets[name], **kw})

    def to_dict(self):
        return asdict(self)


def sinusoidal(positions, dim):
    """Standard sinusoidal embedding of integer positions or steps: (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = positions.to(torch.float32)[..., None] * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class PointEncoder(nn.Module):
    """Shared per-point MLP followed by a max over points."""

    def __init__(self, out_dim, hidden=64):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(3, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden * 2), nn.ReLU(),
            nn.Linear(hidden * 2, out_dim),
        )

    def forward(self, points):
        # points: (B, N, 3)
        if points.shape[-2] == 0:
            raise ShapeError("object shape has no points")
        return self.mlp(points).max(dim=-2).values


class HoiDenoiser(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or DenoiserConfig()
        self.cfg = cfg
        d, L = cfg.feature_dim, cfg.latent_dim
        self.past_proj = nn.Linear(d, L)
        self.x_proj = nn.Linear(d, L)
        self.shape_enc = PointEncoder(L, cfg.point_hidden)
        self.time_mlp = nn.Sequential(nn.Linear(L, L), nn.SiLU(), nn.Linear(L, L))
        enc_layer = nn.TransformerEncoderLayer(L, cfg.heads, cfg.ff_mult * L, cfg.dropout,
                                               activation="gelu", batch_first=True)
        dec_layer = nn.TransformerDecoderLayer(L, cfg.heads, cfg.ff_mult * L, cfg.dropout,
                                               activation="gelu", batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, cfg.encoder_layers, enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.decoder_layers)
        self.head = nn.Linear(L, d)
        if cfg.zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def _positions(self, n, offset=0):
        if offset + n > self.cfg.max_frames:
            raise ConfigError(f"{offset + n} frames exceed max_frames={self.cfg.max_frames}")
        return sinusoidal(torch.arange(offset, offset + n), self.cfg.latent_dim)

    def encode_condition(self, past, shape_points):
        """Memory tokens (B, H, latent) from past features (B, H, D) and points (B, N, 3)."""
        if past.shape[1] < 1:
            raise ShapeError("need at least one past frame")
        h = past.shape[1]
        tokens = self.past_proj(past) + self._positions(h)
        tokens = tokens + self.shape_enc(shape_points)[:, None, :]
        return self.encoder(tokens)

    def denoise(self, x_t, t, memory):
        """Clean estimate (B, F, D) of the future from noised x_t at step t."""
        b, f, _ = x_t.shape
        h = memory.shape[1]
        t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.expand(b)
        temb = self.time_mlp(sinusoidal(t, self.cfg.latent_dim))
        tokens = self.x_proj(x_t) + self._positions(f, offset=h) + temb[:, None, :]
        return self.head(self.decoder(tokens, memory))

    def forward(self, x_t, t, past, shape_points):
        return self.denoise(x_t, t, self.encode_condition(past, shape_points))

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())
