"""Risk-aware multiplicative health index and object-level pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    BoundingBox,
    Mode,
    RiskWeightTable,
    as_unit_map,
    default_risk_table,
    severity_vector,
)

# Severities this close to 1 count as total failure of the mode.
SATURATION_BAND = 1e-12
_TINY = 1e-300


def compute_gshi(s, table: RiskWeightTable | None = None) -> float:
    """Product over modes of ``(1 - s_i) ** (w_i * alpha_g(i))``."""
    s = severity_vector(s)
    table = table or default_risk_table()
    e = table.exponents()
    if (s > 1.0 - SATURATION_BAND).any():
        return 0.0
    keep = 1.0 - s
    if (keep < _TINY).any():
        return float(np.prod(keep**e))
    return float(math.exp(math.fsum(e * np.log1p(-s))))


def gshi_partial(s, i: int, table: RiskWeightTable | None = None) -> float:
    """Closed-form derivative of the index with respect to severity ``i``."""
    s = severity_vector(s)
    table = table or default_risk_table()
    e = table.exponents()
    others = math.prod((1.0 - s[j]) ** e[j] for j in range(len(s)) if j != i)
    return -e[i] * (1.0 - s[i]) ** (e[i] - 1.0) * others


def gshi_gradient_check(s, table: RiskWeightTable | None, i: int, eps: float) -> float:
    """Forward difference of the index along mode ``i``; never positive."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s = np.array(severity_vector(s))
    if s[i] + eps > 1.0:
        raise ValueError(f"s[{i}] + eps exceeds 1")
    bumped = s.copy()
    bumped[i] += eps
    return compute_gshi(bumped, table) - compute_gshi(s, table)


@dataclass(frozen=True)
class ObjectReliability:
    box: BoundingBox
    score: float


def object_reliability(u, box: BoundingBox) -> ObjectReliability:
    """One minus the mean uncertainty inside a detection box."""
    u = as_unit_map(u, what="uncertainty")
    box.validate(width=u.shape[1], height=u.shape[0])
    patch = u[box.y_min : box.y_max, box.x_min : box.x_max]
    score = 1.0 - float(patch.sum()) / box.area
    return ObjectReliability(box, min(1.0, max(0.0, score)))


def severities_from_modes(modes) -> np.ndarray:
    """Expand ``[(mode, severity), ...]`` into a full severity vector."""
    s = np.zeros(len(Mode))
    for m, v in modes:
        s[Mode(m)] = v
    return severity_vector(s)
