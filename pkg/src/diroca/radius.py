"""Robustness radii from the two concentration bounds.

The bound constants are not identifiable from data and are exposed as
configuration with conventional defaults (c = e, c1 = e, c2 = 1, alpha = 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["ConcentrationConfig", "gaussian_radii", "empirical_radii", "uniform_eta"]

_E = math.e


def uniform_eta(delta: float) -> float:
    """Uniform allocation of a global confidence delta over the two levels."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must be in (0, 1]")
    return 1.0 - math.sqrt(1.0 - delta)


@dataclass(frozen=True)
class ConcentrationConfig:
    n_low: int
    n_high: int
    eta_low: float = 0.05
    eta_high: float = 0.05
    c_low: float = _E
    c_high: float = _E
    c1_low: float = _E
    c1_high: float = _E
    c2_low: float = 1.0
    c2_high: float = 1.0
    alpha_low: float = 2.0
    alpha_high: float = 2.0
    dim_low: int = 1
    dim_high: int = 1

    def __post_init__(self):
        if self.n_low < 1 or self.n_high < 1:
            raise ValueError("sample counts must be positive")
        for name in ("eta_low", "eta_high"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        for name in (
            "c_low", "c_high", "c1_low", "c1_high",
            "c2_low", "c2_high", "alpha_low", "alpha_high",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dim_low < 1 or self.dim_high < 1:
            raise ValueError("dimensions must be at least 1")

    @property
    def delta(self) -> float:
        return 1.0 - (1.0 - self.eta_low) * (1.0 - self.eta_high)


def _log_ratio(c: float, eta: float, name: str) -> float:
    if c / eta <= 1.0:
        raise ValueError(
            f"radius undefined: log({name}/eta) is nonpositive (c={c}, eta={eta})"
        )
    return math.log(c / eta)


def gaussian_radii(cfg: ConcentrationConfig) -> tuple[float, float, float]:
    """Per-level and joint radii for moment-based environments.

    eps_d = log(c_d / eta_d) / sqrt(N_d), combined in quadrature.
    """
    eps_low = _log_ratio(cfg.c_low, cfg.eta_low, "c_low") / math.sqrt(cfg.n_low)
    eps_high = _log_ratio(cfg.c_high, cfg.eta_high, "c_high") / math.sqrt(cfg.n_high)
    return eps_low, eps_high, math.hypot(eps_low, eps_high)


def _empirical_radius(n: int, c1: float, c2: float, alpha: float, dim: int, eta: float,
                      name: str) -> float:
    num = _log_ratio(c1, eta, name)
    threshold = num / c2
    ratio = num / (c2 * n)
    if n >= threshold:
        exponent = min(1.0 / dim, 0.5)
    else:
        exponent = 1.0 / alpha
    return ratio**exponent


def empirical_radii(cfg: ConcentrationConfig) -> tuple[float, float, float]:
    """Per-level and joint radii for sample-based environments.

    Above the sample-size threshold the decay exponent is min(1/dim, 1/2);
    below it the light-tail exponent 1/alpha applies.
    """
    eps_low = _empirical_radius(
        cfg.n_low, cfg.c1_low, cfg.c2_low, cfg.alpha_low, cfg.dim_low,
        cfg.eta_low, "c1_low",
    )
    eps_high = _empirical_radius(
        cfg.n_high, cfg.c1_high, cfg.c2_high, cfg.alpha_high, cfg.dim_high,
        cfg.eta_high, "c1_high",
    )
    return eps_low, eps_high, math.hypot(eps_low, eps_high)
