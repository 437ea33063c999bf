"""JSON run configuration with dotted-key overrides.

Unknown sections or keys are rejected so typos fail loudly.
"""
import copy
import json

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "data": {"past": 10, "future": 25, "stride": 5},
    "diffusion": {"T": 100, "schedule": "linear", "steps": 3000, "batch_size": 64, "lr": 1e-3,
                  "velocity": "smooth"},
    "loss": {"lambda_h": 1.0, "lambda_o": 0.1, "lambda_vh": 0.2, "lambda_vo": 0.02},
    "denoiser": {"preset": "desk", "latent_dim": 64, "encoder_layers": 2, "decoder_layers": 2, "heads": 4,
                 "dropout": 0.1, "ff_mult": 2, "max_frames": 64},
    "predictor": {"dct_bases": 10, "blocks": 4, "width": 64, "steps": 2000, "batch_size": 64, "lr": 1e-3,
                  "contact_mode": "marker", "relative": True,
                  "lambda_o": 1.0, "lambda_vo": 0.1, "lambda_c": 1.0, "lambda_p": 0.1},
    "frames": {"orientation_mode": "translation_only"},
    "corrector": {"eps_penetration": 0.01, "eps_contact": 0.05, "late_fraction": 0.1, "stride": 2,
                  "mode": "mesh", "guard": True},
}


def _merge(base, over, path=""):
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file at ``path``, then ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _merge(cfg, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = {}
        cur = node
        parts = key.split(".")
        for p in parts[:-1]:
            cur[p] = {}
            cur = cur[p]
        cur[parts[-1]] = value
        _merge(cfg, node)
    return cfg


def get(cfg, dotted):
    cur = cfg
    for p in dotted.split("."):
        cur = cur[p]
    return cur
