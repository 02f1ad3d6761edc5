"""Posynomial map from mobility levels to the daily infection rate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .posynomial import Posynomial, VarId

CATEGORIES = (
    "retail_and_recreation",
    "grocery_and_pharmacy",
    "parks",
    "transit_stations",
    "workplaces",
    "residential",
)

LEVEL_FLOOR = 1e-3


@dataclass(frozen=True)
class MobilityMapParams:
    """beta(m) = sum_k theta_k * m_k**alpha_k + b, plus the asymptomatic weight gamma_A."""

    theta: tuple[float, ...]
    alpha: tuple[float, ...]
    b: float
    gamma_A: float
    categories: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.theta) == 0 or len(self.theta) != len(self.alpha):
            raise ValidationError("theta and alpha must be non-empty and of equal length")
        if self.categories and len(self.categories) != len(self.theta):
            raise ValidationError("categories must match theta in length")
        if any(not (t >= 0 and np.isfinite(t)) for t in self.theta):
            raise ValidationError("theta must be nonnegative")
        if not all(np.isfinite(self.alpha)):
            raise ValidationError("alpha must be finite")
        if not (self.b >= 0 and np.isfinite(self.b)):
            raise ValidationError("b must be nonnegative")
        if not (self.gamma_A >= 0 and np.isfinite(self.gamma_A)):
            raise ValidationError("gamma_A must be nonnegative")

    @property
    def K(self) -> int:
        return len(self.theta)

    def to_json(self) -> dict:
        return {
            "theta": list(self.theta),
            "alpha": list(self.alpha),
            "b": self.b,
            "gamma_A": self.gamma_A,
            "categories": list(self.categories),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MobilityMapParams":
        return cls(
            theta=obj["theta"],
            alpha=obj["alpha"],
            b=obj["b"],
            gamma_A=obj["gamma_A"],
            categories=obj.get("categories", ()),
        )


def _levels(m: Sequence[float], K: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (K,):
        raise DomainError(f"mobility vector must have {K} entries, got shape {m.shape}")
    if not np.all(m > 0):
        raise DomainError("mobility levels must be positive")
    return m


def beta(m: Sequence[float], p: MobilityMapParams) -> float:
    m = _levels(m, p.K)
    return float(np.dot(p.theta, m ** np.asarray(p.alpha)) + p.b)


def beta_series(mobility: np.ndarray, p: MobilityMapParams) -> np.ndarray:
    """Vectorised ``beta`` over a ``(days, K)`` array."""
    mobility = np.asarray(mobility, dtype=float)
    if mobility.ndim != 2 or mobility.shape[1] != p.K:
        raise DomainError(f"mobility array must be (days, {p.K})")
    if not np.all(mobility > 0):
        raise DomainError("mobility levels must be positive")
    return (mobility ** np.asarray(p.alpha)) @ np.asarray(p.theta) + p.b


def beta_posynomial(p: MobilityMapParams, variables: Sequence[VarId]) -> Posynomial:
    """Symbolic beta; zero-weight categories and a zero bias are omitted."""
    if len(variables) != p.K:
        raise DomainError(f"need {p.K} variables, got {len(variables)}")
    names, exps, coeffs = list(variables), [], []
    for k, (th, al) in enumerate(zip(p.theta, p.alpha)):
        if th > 0:
            row = [0.0] * p.K
            row[k] = al
            exps.append(row)
            coeffs.append(th)
    if p.b > 0:
        exps.append([0.0] * p.K)
        coeffs.append(p.b)
    if not coeffs:
        raise DomainError("all theta and b are zero: beta is not a posynomial")
    return Posynomial(names, exps, coeffs)


def percent_to_level(pct: float) -> float:
    """Signed percent change from baseline to a positive level (baseline = 1)."""
    return max(LEVEL_FLOOR, 1.0 + float(pct) / 100.0)
