"""Camera degradation synthesis, a multiplicative health index and its evaluation."""

__version__ = "0.1.0"

from .core import DataError, Mode, Regime, RiskWeightTable, classify_regime, default_risk_table
from .gshi import compute_gshi, gshi_partial

__all__ = [
    "DataError",
    "Mode",
    "Regime",
    "RiskWeightTable",
    "classify_regime",
    "compute_gshi",
    "default_risk_table",
    "gshi_partial",
]
