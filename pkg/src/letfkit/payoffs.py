"""Closed-form terminal payoffs of bond/LETF and bond/VETF portfolios.

Expresses the terminal portfolio multiple P/W(0) as a function of the
realized gross index return s = S(T)/S(0).  Under GBM the LETF payoff is a
deterministic power curve in s; with jumps it additionally carries a
path-dependent jump adjustment supplied as an explicit jump list.  These
formulas double as an exact per-path oracle for the Monte Carlo engine in
the no-rebalance GBM case.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .models import EtfCosts, GbmModelParams, ModelParams

__all__ = [
    "StaticPortfolioSpec",
    "PayoffCurve",
    "drag_factor",
    "letf_payoff_gbm",
    "letf_payoff_with_jumps",
    "vetf_payoff",
    "jump_adjustment_factor",
    "payoff_curve",
]


@dataclass(frozen=True)
class StaticPortfolioSpec:
    """Buy-and-hold split: `alpha` in the fund, the rest in the bond."""

    alpha: float
    costs: EtfCosts
    horizon: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")


def drag_factor(params: ModelParams, costs: EtfCosts, horizon: float) -> float:
    """Deterministic prefactor of the leveraged payoff.

    exp(((1-beta)*r + beta*(1-beta)*sigma^2/2 - c_ell) * T); strictly below
    one for beta > 1, which is the volatility-and-fee drag on the fund.
    """
    beta = costs.beta
    rate = (1.0 - beta) * params.r + 0.5 * beta * (1.0 - beta) * params.sigma**2 - costs.c_ell
    return math.exp(rate * horizon)


def _check_gross_return(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("index gross return must be positive")
    return s


def letf_payoff_gbm(spec: StaticPortfolioSpec, params: GbmModelParams, s):
    """Terminal multiple of the bond/LETF portfolio at index gross return s."""
    s = _check_gross_return(s)
    bond = (1.0 - spec.alpha) * math.exp(params.r * spec.horizon)
    fund = spec.alpha * drag_factor(params, spec.costs, spec.horizon) * s**spec.costs.beta
    return bond + fund


def letf_payoff_with_jumps(spec: StaticPortfolioSpec, params: ModelParams, s,
                           jump_sizes) -> np.ndarray:
    """LETF portfolio payoff given the realized jump multipliers on the path."""
    s = _check_gross_return(s)
    bond = (1.0 - spec.alpha) * math.exp(params.r * spec.horizon)
    adjustment = jump_adjustment_factor(spec.costs, jump_sizes)
    fund = spec.alpha * drag_factor(params, spec.costs, spec.horizon) \
        * s**spec.costs.beta * adjustment
    return bond + fund


def vetf_payoff(spec: StaticPortfolioSpec, params: ModelParams, s):
    """Terminal multiple of the bond/VETF portfolio at index gross return s."""
    s = _check_gross_return(s)
    bond = (1.0 - spec.alpha) * math.exp(params.r * spec.horizon)
    return bond + spec.alpha * math.exp(-spec.costs.c_v * spec.horizon) * s


def jump_adjustment_factor(costs: EtfCosts, jump_sizes) -> float:
    """Product over jumps of max(1 + beta*(xi - 1), 0) / xi^beta.

    One for an empty jump list; at most one for beta > 1, with equality
    only when every jump multiplier equals one.
    """
    xi = np.asarray(jump_sizes, dtype=np.float64)
    if xi.size == 0:
        return 1.0
    if np.any(xi <= 0):
        raise ValueError("jump multipliers must be positive")
    factors = np.maximum(1.0 + costs.beta * (xi - 1.0), 0.0) / xi**costs.beta
    return float(np.prod(factors))


@dataclass(frozen=True)
class PayoffCurve:
    """Plot-ready payoff diagram on a grid of index gross returns."""

    s: np.ndarray
    letf_multiple: np.ndarray
    vetf_multiple: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("grid of gross returns must be strictly increasing")
        for name, arr in (("letf", self.letf_multiple), ("vetf", self.vetf_multiple)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} multiples must be finite and nonnegative")

    @property
    def difference(self) -> np.ndarray:
        return self.letf_multiple - self.vetf_multiple

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "P_ell_over_W0", "P_v_over_W0", "difference"])
            for row in zip(self.s, self.letf_multiple, self.vetf_multiple, self.difference):
                writer.writerow([repr(float(v)) for v in row])


def payoff_curve(alpha_letf: float, alpha_vetf: float, costs: EtfCosts,
                 params: GbmModelParams, horizon: float,
                 s_min: float = 0.5, s_max: float = 2.0,
                 n_points: int = 512) -> PayoffCurve:
    """Evaluate both GBM payoffs on a log-uniform grid of gross returns."""
    if not 0 < s_min < s_max:
        raise ValueError("need 0 < s_min < s_max")
    s = np.exp(np.linspace(math.log(s_min), math.log(s_max), n_points))
    letf_spec = StaticPortfolioSpec(alpha_letf, costs, horizon)
    vetf_spec = StaticPortfolioSpec(alpha_vetf, costs, horizon)
    return PayoffCurve(s, letf_payoff_gbm(letf_spec, params, s),
                       vetf_payoff(vetf_spec, params, s))
