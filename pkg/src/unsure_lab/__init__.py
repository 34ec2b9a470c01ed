"""Zero-expected-divergence denoising: score moments, Lagrange multipliers,
UNSURE-type losses and small-scale training and reporting tools."""

from . import errors, estimators, inverse, losses, models, multipliers, nn, score, train
from .errors import UnsureError

__all__ = ["errors", "estimators", "inverse", "losses", "models", "multipliers", "nn", "score", "train",
           "UnsureError"]
__version__ = "0.1.0"
