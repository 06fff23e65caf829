"""Summary statistics of outperformance-ratio distributions.

Everything operates on flat sample arrays and is permutation-invariant.
Quantiles use the linear-interpolation convention (numpy's default,
h = (n-1)q + 1), pinned so golden values stay stable.  The Omega ratio is
computed from the discrete expectation form, which is exact on samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "OmegaResult",
    "StatsSummary",
    "PercentileBands",
    "omega",
    "expected_shortfall",
    "mean_with_stderr",
    "empirical_cdf",
    "cdf_on_grid",
    "sample_quantile",
    "summarize",
    "percentile_bands",
    "write_stats_csv",
    "write_cdf_csv",
    "write_bands_csv",
    "STATS_CSV_COLUMNS",
]


class OmegaResult(NamedTuple):
    """Omega ratio; `no_downside` flags an exactly-zero downside integral."""

    value: float
    no_downside: bool

    def __float__(self) -> float:
        return self.value


def _as_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("sample set is empty")
    return arr


def omega(samples, threshold: float = 1.0) -> OmegaResult:
    """Mean gain above the threshold over mean loss below it.

    Ties at the threshold contribute zero to both sides.  Returns +inf with
    the flag set when no sample falls below the threshold.
    """
    arr = _as_samples(samples)
    upside = np.maximum(arr - threshold, 0.0).mean()
    downside = np.maximum(threshold - arr, 0.0).mean()
    if downside == 0.0:
        return OmegaResult(math.inf, True)
    return OmegaResult(upside / downside, False)


def expected_shortfall(samples, level: float = 0.05) -> float:
    """Mean of the worst ceil(level * n) samples."""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    arr = _as_samples(samples)
    if arr.size < math.ceil(1.0 / level):
        raise ValueError(f"need at least {math.ceil(1.0 / level)} samples for "
                         f"level {level}, got {arr.size}")
    worst = math.ceil(level * arr.size)
    return float(np.sort(arr)[:worst].mean())


def mean_with_stderr(samples) -> tuple[float, float]:
    """Sample mean and its 95% half-width, 1.96 * s / sqrt(n)."""
    arr = _as_samples(samples)
    if arr.size < 2:
        raise ValueError("need at least two samples for a standard error")
    half_width = 1.96 * arr.std(ddof=1) / math.sqrt(arr.size)
    return float(arr.mean()), float(half_width)


def empirical_cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Right-continuous empirical CDF as (sorted values, cumulative probs)."""
    arr = np.sort(_as_samples(samples))
    probs = np.arange(1, arr.size + 1, dtype=np.float64) / arr.size
    return arr, probs


def cdf_on_grid(samples, grid) -> np.ndarray:
    """Evaluate the empirical CDF at the given grid points."""
    values, _ = empirical_cdf(samples)
    grid = np.asarray(grid, dtype=np.float64)
    return np.searchsorted(values, grid, side="right") / values.size


def sample_quantile(samples, q) -> np.ndarray:
    """Linear-interpolation sample quantile(s)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantiles must lie strictly inside (0, 1)")
    return np.quantile(_as_samples(samples), q)


@dataclass(frozen=True)
class StatsSummary:
    """One row of ratio-distribution statistics."""

    mean: float
    mean_stderr_95: float
    median: float
    pct5: float
    pct20: float
    pct80: float
    pct95: float
    es5: float
    omega_at_1: float
    prob_gt_1: float

    def __post_init__(self):
        if not self.pct5 <= self.median <= self.pct95:
            raise ValueError("percentile ordering violated")
        if self.es5 > self.pct5 + 1e-12:
            raise ValueError("expected shortfall cannot exceed the 5th percentile")
        if not 0.0 <= self.prob_gt_1 <= 1.0:
            raise ValueError("prob_gt_1 must lie in [0, 1]")
        if self.omega_at_1 < 0.0:
            raise ValueError("omega must be nonnegative")


def summarize(samples) -> StatsSummary:
    arr = _as_samples(samples)
    if arr.size == 1:
        # degenerate single-path summary: every statistic collapses
        v = float(arr[0])
        return StatsSummary(mean=v, mean_stderr_95=0.0, median=v, pct5=v,
                            pct20=v, pct80=v, pct95=v, es5=v,
                            omega_at_1=omega(arr, 1.0).value,
                            prob_gt_1=float(v > 1.0))
    mean, half_width = mean_with_stderr(arr)
    p5, p20, p50, p80, p95 = sample_quantile(arr, [0.05, 0.20, 0.50, 0.80, 0.95])
    return StatsSummary(
        mean=mean,
        mean_stderr_95=half_width,
        median=float(p50),
        pct5=float(p5),
        pct20=float(p20),
        pct80=float(p80),
        pct95=float(p95),
        es5=expected_shortfall(arr, 0.05),
        omega_at_1=omega(arr, 1.0).value,
        prob_gt_1=float((arr > 1.0).mean()),
    )


@dataclass(frozen=True)
class PercentileBands:
    """Per-time sample quantiles of a path ensemble."""

    times: np.ndarray
    quantiles: tuple
    bands: np.ndarray  # shape (n_times, n_quantiles)

    def __post_init__(self):
        if self.bands.shape != (len(self.times), len(self.quantiles)):
            raise ValueError("band matrix shape does not match times/quantiles")
        if np.any(np.diff(self.bands, axis=1) < -1e-12):
            raise ValueError("band ordering violated")


DEFAULT_BAND_QUANTILES = (0.05, 0.20, 0.50, 0.80, 0.95)


def percentile_bands(paths: np.ndarray, times,
                     quantiles=DEFAULT_BAND_QUANTILES) -> PercentileBands:
    """Quantiles of paths (n_paths, n_times) at each time point."""
    paths = np.asarray(paths, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if paths.ndim != 2 or paths.shape[1] != times.size:
        raise ValueError("paths must be (n_paths, n_times)")
    bands = np.quantile(paths, list(quantiles), axis=0).T
    return PercentileBands(times=times, quantiles=tuple(quantiles), bands=bands)


# column names for summary CSV export, one row per experiment cell
STATS_CSV_COLUMNS = ["cell", "E_RT", "Median_RT", "p5", "p95", "ES5",
                     "Omega1", "Prob_gt_1", "stderr95"]


def write_stats_csv(rows: list[tuple[str, StatsSummary]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_CSV_COLUMNS)
        for cell, s in rows:
            writer.writerow([cell] + [repr(float(v)) for v in
                                      (s.mean, s.median, s.pct5, s.pct95, s.es5,
                                       s.omega_at_1, s.prob_gt_1, s.mean_stderr_95)])


def write_cdf_csv(samples, path, n_grid: int = 512) -> None:
    """Empirical CDF sampled on an even grid spanning the data."""
    arr = _as_samples(samples)
    grid = np.linspace(arr.min(), arr.max(), n_grid)
    probs = cdf_on_grid(arr, grid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "cdf"])
        for v, p in zip(grid, probs):
            writer.writerow([repr(float(v)), repr(float(p))])


def write_bands_csv(bands: PercentileBands, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"p{int(round(q * 100))}" for q in bands.quantiles])
        for i, t in enumerate(bands.times):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in bands.bands[i]])
