"""Blend-ratio experiments: per-class DCGANs feed synthetic images into a CNN
classifier trained on real/synthetic mixes, evaluated on a fixed real test set.

Everything numeric runs on a small numpy autodiff engine (:mod:`gansweep.tensor`).
"""

from .errors import ConfigurationError, ContractError, DivergenceError, GanSweepError, IngestionError, ShapeError
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DivergenceError",
    "GanSweepError",
    "IngestionError",
    "ShapeError",
    "Tensor",
    "no_grad",
]
