"""covcon: empirical covariance concentration, measured and bounded.

Simulate isotropic random-vector ensembles, measure how far the empirical
covariance A A^T / N strays from the identity, and compare the observed
deviations, extreme eigenvalues, and sparse-submatrix norms against
closed-form concentration envelopes with explicitly calibrated constants.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    AnalyticUnavailableError,
    ConfigError,
    ContractError,
    EnumerationBudgetError,
    NumericalError,
    RegimeError,
    ResourceError,
)

__all__ = [
    "__version__",
    "AnalyticUnavailableError",
    "ConfigError",
    "ContractError",
    "EnumerationBudgetError",
    "NumericalError",
    "RegimeError",
    "ResourceError",
]
