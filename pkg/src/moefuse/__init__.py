"""Sparse mixture-of-experts fusion of multi-layer frozen-encoder features.

A linear gate driven by the last layer top-k-selects per-row experts from 24
disjoint per-layer groups; the gate-weighted expert outputs are concatenated
and scored by a pooling head. Ships with a minimal reverse-mode autodiff
core, an AdamW/cosine trainer over precomputed feature files, EER metrics
and a sweep CLI. Hot row-wise kernels run compiled when the extension built,
with a pure-numpy fallback (``moefuse._kernels.active_backend()``).
"""

from ._kernels import active_backend, available_backends
from .moe_fusion import MoEConfig
from .model import FusionModel
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "MoEConfig",
    "FusionModel",
    "TrainConfig",
    "active_backend",
    "available_backends",
    "__version__",
]
