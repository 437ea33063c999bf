"""Diffusion-based human-object interaction forecasting with contact-anchored correction."""
from .core import HoiSequence, ObjectShape, Se3Transform, flatten_state, unflatten_state
from .body import BodyProxy, Skeleton, MarkerSet
from .errors import HoiError

__version__ = "0.1.0"

__all__ = ["HoiSequence", "ObjectShape", "Se3Transform", "flatten_state", "unflatten_state", "BodyProxy",
           "Skeleton", "MarkerSet", "HoiError"]
