"""Parametric asset dynamics: GBM and double-exponential jump diffusion.

Terminal/interval sampling is exact in distribution (lognormal diffusion
plus a compound-Poisson jump product per interval), so statistics carry no
time-discretization bias regardless of the rebalancing interval.  A
leveraged fund's interval return applies the limited-liability floor
max(1 + beta*(xi - 1), 0) to every jump, so the fund value can reach zero
but never goes negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "GbmModelParams",
    "JumpModelParams",
    "EtfCosts",
    "RngStream",
    "ModelParams",
    "kappa",
    "IntervalShocks",
    "draw_interval_shocks",
    "index_gross_from_shocks",
    "letf_gross_from_shocks",
    "sample_index_gross_return",
    "sample_letf_gross_return",
    "sample_paired_gross_returns",
    "bond_gross_return",
    "load_model_config",
    "GBM_PRESET",
    "KOU_PRESET",
    "BASE_COSTS",
    "PRESETS",
]


def _check_finite(**fields: float) -> None:
    for name, value in fields.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class GbmModelParams:
    """Annualized real drift, volatility, and risk-free rate."""

    mu: float
    sigma: float
    r: float

    def __post_init__(self):
        _check_finite(mu=self.mu, sigma=self.sigma, r=self.r)
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class JumpModelParams:
    """GBM parameters plus a double-exponential compound-Poisson jump part.

    Log jump sizes y are exponential with rate `eta1` (upward, probability
    `p_up`) or rate `eta2` in magnitude (downward).  `eta1 > 1` is required
    for the jump multiplier xi = e^y to have a finite mean.
    """

    mu: float
    sigma: float
    r: float
    lam: float
    p_up: float
    eta1: float
    eta2: float

    def __post_init__(self):
        _check_finite(mu=self.mu, sigma=self.sigma, r=self.r, lam=self.lam,
                      p_up=self.p_up, eta1=self.eta1, eta2=self.eta2)
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.lam < 0:
            raise ValueError(f"jump intensity must be nonnegative, got {self.lam}")
        if not 0.0 <= self.p_up <= 1.0:
            raise ValueError(f"p_up must lie in [0, 1], got {self.p_up}")
        if self.eta1 <= 1:
            raise ValueError(f"eta1 must exceed 1 for a finite jump mean, got {self.eta1}")
        if self.eta2 <= 0:
            raise ValueError(f"eta2 must be positive, got {self.eta2}")


ModelParams = Union[GbmModelParams, JumpModelParams]


@dataclass(frozen=True)
class EtfCosts:
    """Expense ratios (per year) and the leverage multiplier."""

    c_ell: float
    c_v: float
    beta: float

    def __post_init__(self):
        _check_finite(c_ell=self.c_ell, c_v=self.c_v, beta=self.beta)
        if self.c_ell < 0 or self.c_v < 0:
            raise ValueError("expense ratios must be nonnegative")
        if self.beta < 1:
            raise ValueError(f"leverage multiplier must be >= 1, got {self.beta}")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream_id) fully determine draws.

    Streams with distinct ids are statistically independent, so path blocks
    can be generated concurrently and still reproduce bit-for-bit.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = (int(self.stream_id) << 64) | (int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        return np.random.Generator(np.random.Philox(key=key))


# annualized fits to a broad US stock index (real terms); the GBM and jump
# presets come from separate fits to the same data and are kept distinct
GBM_PRESET = GbmModelParams(mu=0.0818, sigma=0.1849, r=0.0032)
KOU_PRESET = JumpModelParams(mu=0.08732, sigma=0.1477, r=0.0032,
                             lam=0.3163, p_up=0.2258, eta1=4.3591, eta2=5.5337)
BASE_COSTS = EtfCosts(c_ell=0.0089, c_v=0.0, beta=2.0)

PRESETS: dict[str, ModelParams] = {"gbm": GBM_PRESET, "kou": KOU_PRESET}


def _jump_part(params: ModelParams) -> tuple[float, float, float, float]:
    """(lam, p_up, eta1, eta2), with lam == 0 for pure GBM."""
    if isinstance(params, JumpModelParams):
        return params.lam, params.p_up, params.eta1, params.eta2
    return 0.0, 0.0, math.inf, math.inf


def kappa(params: ModelParams) -> float:
    """Mean relative jump size E[xi - 1]; zero when there are no jumps."""
    lam, p_up, eta1, eta2 = _jump_part(params)
    if lam == 0.0:
        return 0.0
    mean_xi = p_up * eta1 / (eta1 - 1.0) + (1.0 - p_up) * eta2 / (eta2 + 1.0)
    return mean_xi - 1.0


@dataclass(frozen=True)
class IntervalShocks:
    """Shared randomness for one interval across a batch of paths.

    The index and LETF returns over the same interval must be computed from
    one draw tuple (z, jump count, jump sizes) so the two portfolios see
    identical market randomness pathwise.  Per-path jump aggregates are
    stored instead of ragged jump lists.
    """

    z: np.ndarray                 # standard normal, one per path
    n_jumps: np.ndarray           # Poisson count per path
    sum_log_xi: np.ndarray        # sum of log jump multipliers per path
    sum_log_letf_factor: np.ndarray  # sum of log max(1 + beta*(xi-1), 0), wiped paths excluded
    letf_wiped: np.ndarray        # True where any jump floored the fund to zero


def draw_interval_shocks(params: ModelParams, costs: EtfCosts, dt: float,
                         rng: Union[RngStream, np.random.Generator],
                         size: int) -> IntervalShocks:
    """Draw one interval's (z, jumps) tuple for `size` paths.

    Jump sizes come from inverse-CDF sampling on each exponential branch,
    selected by a Bernoulli(p_up) draw.  When the jump intensity is zero the
    Poisson draw is skipped entirely, so a zero-intensity jump model
    consumes the stream identically to plain GBM.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    z = gen.standard_normal(size)
    lam, p_up, eta1, eta2 = _jump_part(params)
    zeros = np.zeros(size)
    if lam == 0.0:
        return IntervalShocks(z, np.zeros(size, dtype=np.int64), zeros,
                              zeros.copy(), np.zeros(size, dtype=bool))
    n_jumps = gen.poisson(lam * dt, size)
    total = int(n_jumps.sum())
    if total == 0:
        return IntervalShocks(z, n_jumps, zeros, zeros.copy(),
                              np.zeros(size, dtype=bool))
    upward = gen.random(total) < p_up
    magnitude = gen.exponential(1.0, total)
    y = np.where(upward, magnitude / eta1, -magnitude / eta2)
    path_of_jump = np.repeat(np.arange(size), n_jumps)
    sum_log_xi = np.bincount(path_of_jump, weights=y, minlength=size)
    letf_factor = np.maximum(1.0 + costs.beta * (np.exp(y) - 1.0), 0.0)
    wiped_jump = letf_factor <= 0.0
    letf_wiped = np.bincount(path_of_jump, weights=wiped_jump.astype(float), minlength=size) > 0
    log_factor = np.where(wiped_jump, 0.0, np.log(np.where(wiped_jump, 1.0, letf_factor)))
    sum_log_letf_factor = np.bincount(path_of_jump, weights=log_factor, minlength=size)
    return IntervalShocks(z, n_jumps, sum_log_xi, sum_log_letf_factor, letf_wiped)


def index_gross_from_shocks(params: ModelParams, dt: float,
                            shocks: IntervalShocks) -> np.ndarray:
    """Gross index return S(t+dt)/S(t) for a drawn shock batch."""
    lam = _jump_part(params)[0]
    drift = (params.mu - lam * kappa(params) - 0.5 * params.sigma**2) * dt
    return np.exp(drift + params.sigma * math.sqrt(dt) * shocks.z + shocks.sum_log_xi)


def letf_gross_from_shocks(params: ModelParams, costs: EtfCosts, dt: float,
                           shocks: IntervalShocks) -> np.ndarray:
    """Gross leveraged-fund return over the interval; nonnegative on every path."""
    lam = _jump_part(params)[0]
    beta = costs.beta
    drift = ((1.0 - beta) * params.r + beta * (params.mu - lam * kappa(params))
             - 0.5 * beta**2 * params.sigma**2 - costs.c_ell) * dt
    diffused = np.exp(drift + beta * params.sigma * math.sqrt(dt) * shocks.z
                      + shocks.sum_log_letf_factor)
    return np.where(shocks.letf_wiped, 0.0, diffused)


def sample_index_gross_return(params: ModelParams, dt: float,
                              rng: Union[RngStream, np.random.Generator],
                              size: int = 1) -> np.ndarray:
    shocks = draw_interval_shocks(params, BASE_COSTS, dt, rng, size)
    return index_gross_from_shocks(params, dt, shocks)


def sample_letf_gross_return(params: ModelParams, costs: EtfCosts, dt: float,
                             rng: Union[RngStream, np.random.Generator],
                             size: int = 1) -> np.ndarray:
    """LETF gross return; on an equal fresh stream this pairs pathwise with
    `sample_index_gross_return` because both consume identical draws."""
    shocks = draw_interval_shocks(params, costs, dt, rng, size)
    return letf_gross_from_shocks(params, costs, dt, shocks)


def sample_paired_gross_returns(params: ModelParams, costs: EtfCosts, dt: float,
                                rng: Union[RngStream, np.random.Generator],
                                size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(index, letf) gross returns over one interval from shared draws."""
    shocks = draw_interval_shocks(params, costs, dt, rng, size)
    return (index_gross_from_shocks(params, dt, shocks),
            letf_gross_from_shocks(params, costs, dt, shocks))


def bond_gross_return(params: ModelParams, dt: float) -> float:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return math.exp(params.r * dt)


_CONFIG_KEYS = ("mu", "sigma", "r", "lambda", "p_up", "eta1", "eta2",
                "c_ell", "c_v", "beta")


def load_model_config(path) -> tuple[ModelParams, EtfCosts]:
    """Read model and cost parameters from a JSON file.

    The file must contain exactly the keys mu, sigma, r, lambda, p_up,
    eta1, eta2, c_ell, c_v, beta.  A zero lambda yields GBM parameters.
    """
    with open(path) as fh:
        raw = json.load(fh)
    missing = [k for k in _CONFIG_KEYS if k not in raw]
    extra = [k for k in raw if k not in _CONFIG_KEYS]
    if missing or extra:
        raise ValueError(f"model config {path}: missing keys {missing}, unexpected keys {extra}")
    costs = EtfCosts(c_ell=float(raw["c_ell"]), c_v=float(raw["c_v"]),
                     beta=float(raw["beta"]))
    if float(raw["lambda"]) == 0.0:
        return GbmModelParams(mu=float(raw["mu"]), sigma=float(raw["sigma"]),
                              r=float(raw["r"])), costs
    params = JumpModelParams(mu=float(raw["mu"]), sigma=float(raw["sigma"]),
                             r=float(raw["r"]), lam=float(raw["lambda"]),
                             p_up=float(raw["p_up"]), eta1=float(raw["eta1"]),
                             eta2=float(raw["eta2"]))
    return params, costs
