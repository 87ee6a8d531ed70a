"""Invariance-regularized multivariate time series forecasting.

Train recurrent or transformer forecasters across multiple data
environments with an invariance gradient penalty, compare against pooled
empirical risk minimization, and reproduce the whole pipeline from
synthetic structural equation data or air-quality style CSV files.
"""

__version__ = "0.1.0"

from .autodiff import GradientTape, Tensor, backward, finite_diff_check
from .estimators import InvariantForecaster

__all__ = [
    "GradientTape",
    "InvariantForecaster",
    "Tensor",
    "backward",
    "finite_diff_check",
    "__version__",
]
