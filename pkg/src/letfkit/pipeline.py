"""Historical-data pipeline: proxy ETF returns, inflation, block bootstrap.

Takes daily index and T-bill return series plus a monthly CPI level series,
constructs synthetic leveraged/vanilla fund daily returns (leverage and
fees applied at daily frequency, limited-liability floor at -100%),
compounds them within calendar months, deflates to real terms, and
resamples the joint monthly rows with a stationary block bootstrap
(geometric block lengths, circular wrap).

A jump-diffusion stand-in generator is provided because the underlying
market data is proprietary; the pipeline accepts any conforming CSVs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .models import (BASE_COSTS, KOU_PRESET, EtfCosts, ModelParams, RngStream,
                     draw_interval_shocks, index_gross_from_shocks)

__all__ = [
    "ReturnSeries",
    "BootstrapConfig",
    "ScenarioSet",
    "ASSET_ORDER",
    "load_series_csv",
    "write_series_csv",
    "build_proxy_returns",
    "monthly_inflation",
    "to_real",
    "to_nominal",
    "joint_monthly_frame",
    "bootstrap_indices",
    "stationary_block_bootstrap",
    "BootstrapSampler",
    "generate_synthetic_market",
    "build_real_proxy_frame",
    "historical_window",
    "TRADING_DAYS_PER_YEAR",
]

TRADING_DAYS_PER_YEAR = 252
ASSET_ORDER = ("letf", "vetf", "tbill")

_ASSETS = ("index", "tbill", "letf", "vetf")
_FREQUENCIES = ("daily", "monthly", "quarterly")


@dataclass(frozen=True)
class ReturnSeries:
    """Dated periodic returns for one asset, tagged with its frequency."""

    values: pd.Series
    frequency: str
    asset: str

    def __post_init__(self):
        if self.frequency not in _FREQUENCIES:
            raise ValueError(f"unknown frequency {self.frequency!r}")
        if self.asset not in _ASSETS:
            raise ValueError(f"unknown asset {self.asset!r}")
        if self.values.index.is_monotonic_increasing is False or self.values.index.has_duplicates:
            raise ValueError("periods must be strictly increasing")
        floor = -1.0
        arr = self.values.to_numpy()
        if self.asset == "letf":
            if np.any(arr < floor):
                raise ValueError("letf returns cannot fall below -100%")
        elif np.any(arr <= floor):
            raise ValueError(f"{self.asset} returns must stay above -100%")


def load_series_csv(path) -> pd.Series:
    """Read a (date, value) CSV into a float series with a datetime index."""
    frame = pd.read_csv(path)
    if list(frame.columns) != ["date", "value"]:
        raise ValueError(f"{path}: expected columns ['date', 'value'], got {list(frame.columns)}")
    dates = pd.to_datetime(frame["date"])
    if not dates.is_monotonic_increasing or dates.duplicated().any():
        raise ValueError(f"{path}: dates must be strictly increasing")
    return pd.Series(frame["value"].to_numpy(dtype=np.float64), index=pd.DatetimeIndex(dates))


def write_series_csv(series: pd.Series, path) -> None:
    frame = pd.DataFrame({"date": series.index.strftime("%Y-%m-%d"),
                          "value": [repr(float(v)) for v in series.to_numpy()]})
    frame.to_csv(path, index=False)


def _compound_monthly(daily: pd.Series) -> pd.Series:
    """Compound daily returns within each calendar month."""
    grouped = (1.0 + daily).groupby(daily.index.to_period("M")).prod() - 1.0
    return grouped


def build_proxy_returns(index_daily: pd.Series, tbill_daily: pd.Series,
                        costs: EtfCosts) -> dict[str, ReturnSeries]:
    """Construct monthly fund proxy returns from daily market series.

    Daily leveraged return: beta * index + (1 - beta) * tbill - c_ell/252,
    floored at -100%.  Daily vanilla return: index - c_v/252.  Each series
    is then compounded within calendar months.  Inputs must be date-aligned
    and are treated as nominal; deflate the monthly output with `to_real`.
    """
    if not index_daily.index.equals(tbill_daily.index):
        raise ValueError("index and T-bill daily series must be date-aligned")
    daily_fee = 1.0 / TRADING_DAYS_PER_YEAR
    letf_daily = np.maximum(costs.beta * index_daily + (1.0 - costs.beta) * tbill_daily
                            - costs.c_ell * daily_fee, -1.0)
    vetf_daily = index_daily - costs.c_v * daily_fee
    out = {
        "index": _compound_monthly(index_daily),
        "tbill": _compound_monthly(tbill_daily),
        "letf": _compound_monthly(letf_daily),
        "vetf": _compound_monthly(vetf_daily),
    }
    return {asset: ReturnSeries(series, "monthly", asset)
            for asset, series in out.items()}


def monthly_inflation(cpi_levels: pd.Series) -> pd.Series:
    """Per-month inflation rates from a monthly CPI level series."""
    levels = cpi_levels.copy()
    if not isinstance(levels.index, pd.PeriodIndex):
        levels.index = pd.DatetimeIndex(levels.index).to_period("M")
    if levels.index.has_duplicates or not levels.index.is_monotonic_increasing:
        raise ValueError("CPI months must be strictly increasing")
    return levels.pct_change().dropna()


def _apply_inflation(series: ReturnSeries, cpi_levels: pd.Series,
                     direction: int) -> ReturnSeries:
    if series.frequency != "monthly":
        raise ValueError("inflation adjustment operates at monthly granularity")
    inflation = monthly_inflation(cpi_levels)
    missing = series.values.index.difference(inflation.index)
    if len(missing) > 0:
        raise ValueError(f"CPI coverage gap for months {list(missing[:3])}...")
    pi = inflation.reindex(series.values.index).to_numpy()
    if direction > 0:
        adjusted = (1.0 + series.values.to_numpy()) / (1.0 + pi) - 1.0
    else:
        adjusted = (1.0 + series.values.to_numpy()) * (1.0 + pi) - 1.0
    return ReturnSeries(pd.Series(adjusted, index=series.values.index),
                        series.frequency, series.asset)


def to_real(series: ReturnSeries, cpi_levels: pd.Series) -> ReturnSeries:
    """Deflate nominal monthly returns: (1 + nominal) / (1 + inflation) - 1."""
    return _apply_inflation(series, cpi_levels, +1)


def to_nominal(series: ReturnSeries, cpi_levels: pd.Series) -> ReturnSeries:
    """Inverse of `to_real` on the same CPI series."""
    return _apply_inflation(series, cpi_levels, -1)


def joint_monthly_frame(letf: ReturnSeries, vetf: ReturnSeries,
                        tbill: ReturnSeries) -> pd.DataFrame:
    """Align the three monthly series into one (letf, vetf, tbill) frame."""
    for rs, asset in ((letf, "letf"), (vetf, "vetf"), (tbill, "tbill")):
        if rs.frequency != "monthly" or rs.asset != asset:
            raise ValueError(f"expected monthly {asset} series")
    if not (letf.values.index.equals(vetf.values.index)
            and letf.values.index.equals(tbill.values.index)):
        raise ValueError("series must cover identical months")
    return pd.DataFrame({"letf": letf.values, "vetf": vetf.values,
                         "tbill": tbill.values})


@dataclass(frozen=True)
class BootstrapConfig:
    """Stationary block bootstrap settings."""

    expected_block_size: int
    n_paths: int
    n_periods: int
    seed: int

    def __post_init__(self):
        if self.expected_block_size < 1:
            raise ValueError("expected block size must be at least 1")
        if self.n_paths < 1 or self.n_periods < 1:
            raise ValueError("n_paths and n_periods must be positive")


_SCENARIO_MAGIC = b"LFSC"
_SCENARIO_VERSION = 1


@dataclass(frozen=True)
class ScenarioSet:
    """Joint (letf, vetf, tbill) return paths with provenance."""

    returns: np.ndarray            # (n_paths, n_periods, 3)
    seed: int
    source_hash: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.returns.ndim != 3 or self.returns.shape[2] != len(ASSET_ORDER):
            raise ValueError("returns must have shape (n_paths, n_periods, 3)")

    @property
    def n_paths(self) -> int:
        return self.returns.shape[0]

    @property
    def n_periods(self) -> int:
        return self.returns.shape[1]

    def compound(self, group: int) -> "ScenarioSet":
        """Compound consecutive periods in groups (e.g. monthly -> quarterly)."""
        if self.n_periods % group != 0:
            raise ValueError(f"{self.n_periods} periods do not split into groups of {group}")
        shaped = (1.0 + self.returns).reshape(self.n_paths, self.n_periods // group,
                                              group, len(ASSET_ORDER))
        compounded = shaped.prod(axis=2) - 1.0
        meta = dict(self.meta)
        meta["compound_group"] = group * meta.get("compound_group", 1)
        return ScenarioSet(compounded, self.seed, self.source_hash, meta)

    def save(self, path) -> None:
        """Write a flat binary container; round-trips bit-exactly."""
        data = np.ascontiguousarray(self.returns, dtype=np.float64)
        meta_blob = json.dumps(self.meta, sort_keys=True).encode()
        digest = bytes.fromhex(self.source_hash)
        with open(path, "wb") as fh:
            fh.write(_SCENARIO_MAGIC)
            fh.write(struct.pack("<IQQq", _SCENARIO_VERSION, self.n_paths,
                                 self.n_periods, self.seed))
            fh.write(digest)
            fh.write(struct.pack("<I", len(meta_blob)))
            fh.write(meta_blob)
            fh.write(data.tobytes())

    @classmethod
    def load(cls, path) -> "ScenarioSet":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _SCENARIO_MAGIC:
                raise ValueError(f"{path}: not a scenario container")
            version, n_paths, n_periods, seed = struct.unpack("<IQQq", fh.read(28))
            if version != _SCENARIO_VERSION:
                raise ValueError(f"{path}: unsupported container version {version}")
            digest = fh.read(32).hex()
            (meta_len,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(meta_len).decode())
            data = np.frombuffer(fh.read(), dtype=np.float64)
        returns = data.reshape(n_paths, n_periods, len(ASSET_ORDER)).copy()
        return cls(returns, seed, digest, meta)


def _hash_source(values: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(values.shape).encode())
    h.update(np.ascontiguousarray(values, dtype=np.float64).tobytes())
    return h.hexdigest()


def bootstrap_indices(n_source: int, n_paths: int, n_periods: int,
                      expected_block_size: int,
                      gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row indices for a stationary block bootstrap, plus drawn block lengths.

    Blocks start at uniform positions, run for geometric(1/expected_block_size)
    lengths, and wrap circularly past the end of the source.  The trailing
    block of each path is truncated to fit.  Returned block lengths are the
    raw geometric draws of every block actually opened (before truncation).
    """
    if n_source < 2:
        raise ValueError("need a source series of length at least 2")
    p = 1.0 / expected_block_size
    per_round = max(4, int(2.5 * n_periods * p) + 4)
    starts = np.empty((n_paths, 0), dtype=np.int64)
    lengths = np.empty((n_paths, 0), dtype=np.int64)
    while True:
        new_starts = gen.integers(0, n_source, size=(n_paths, per_round))
        new_lengths = gen.geometric(p, size=(n_paths, per_round)).astype(np.int64)
        starts = np.concatenate([starts, new_starts], axis=1)
        lengths = np.concatenate([lengths, new_lengths], axis=1)
        if lengths.sum(axis=1).min() >= n_periods:
            break
    cum = np.cumsum(lengths, axis=1)
    before = cum - lengths
    take = np.clip(n_periods - before, 0, lengths)
    used = take > 0
    drawn_lengths = lengths[used]
    starts_flat = starts[used]
    take_flat = take[used]
    total = int(take_flat.sum())
    start_rep = np.repeat(starts_flat, take_flat)
    offset_base = np.concatenate([[0], np.cumsum(take_flat)[:-1]])
    within = np.arange(total) - np.repeat(offset_base, take_flat)
    indices = ((start_rep + within) % n_source).reshape(n_paths, n_periods)
    return indices, drawn_lengths


def stationary_block_bootstrap(source: pd.DataFrame,
                               config: BootstrapConfig) -> ScenarioSet:
    """Resample joint monthly rows into a scenario set.

    The same source row feeds all three assets at a given slot, preserving
    their cross-sectional dependence.  Setting the expected block size to 1
    degenerates to i.i.d. row resampling.
    """
    values = _source_values(source)
    if values.shape[0] < 2:
        raise ValueError("source series too short to resample")
    gen = RngStream(config.seed, 0).generator()
    indices, _ = bootstrap_indices(values.shape[0], config.n_paths,
                                   config.n_periods, config.expected_block_size, gen)
    returns = values[indices]
    meta = {"expected_block_size": config.expected_block_size,
            "n_source_rows": int(values.shape[0])}
    return ScenarioSet(returns, config.seed, _hash_source(values), meta)


def _source_values(source: Union[pd.DataFrame, np.ndarray]) -> np.ndarray:
    if isinstance(source, pd.DataFrame):
        missing = [c for c in ASSET_ORDER if c not in source.columns]
        if missing:
            raise ValueError(f"source frame missing columns {missing}")
        return source[list(ASSET_ORDER)].to_numpy(dtype=np.float64)
    return np.asarray(source, dtype=np.float64)


@dataclass(frozen=True)
class BootstrapSampler:
    """Regenerates bootstrap scenario batches on the fly from seeds.

    Batch `stream_id` is a pure function of (seed, stream_id), so training
    minibatches never need to be materialized up front.
    """

    source_values: np.ndarray
    expected_block_size: int
    n_periods: int
    seed: int
    compound_group: int = 1

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, expected_block_size: int,
                   n_periods: int, seed: int, compound_group: int = 1) -> "BootstrapSampler":
        return cls(_source_values(frame), expected_block_size, n_periods,
                   seed, compound_group)

    @property
    def source_hash(self) -> str:
        return _hash_source(self.source_values)

    def sample(self, n_paths: int, stream_id: int) -> np.ndarray:
        gen = RngStream(self.seed, stream_id).generator()
        indices, _ = bootstrap_indices(self.source_values.shape[0], n_paths,
                                       self.n_periods, self.expected_block_size, gen)
        batch = self.source_values[indices]
        if self.compound_group > 1:
            shaped = (1.0 + batch).reshape(n_paths, self.n_periods // self.compound_group,
                                           self.compound_group, batch.shape[2])
            batch = shaped.prod(axis=2) - 1.0
        return batch

    def scenario_set(self, n_paths: int, stream_id: int = 0) -> ScenarioSet:
        meta = {"expected_block_size": self.expected_block_size,
                "n_source_rows": int(self.source_values.shape[0]),
                "compound_group": self.compound_group,
                "stream_id": stream_id}
        return ScenarioSet(self.sample(n_paths, stream_id),
                           self.seed, self.source_hash, meta)


# ---------------------------------------------------------------------------
# Synthetic stand-in market data
# ---------------------------------------------------------------------------

def generate_synthetic_market(out_dir, n_years: int = 98, seed: int = 90210,
                              params: ModelParams = KOU_PRESET,
                              costs: EtfCosts = BASE_COSTS,
                              start_year: int = 1926,
                              annual_inflation: float = 0.03) -> dict[str, Path]:
    """Write a stand-in daily market dataset as (date, value) CSVs.

    Daily real index returns come from exact jump-diffusion sampling, the
    T-bill accrues the model's risk-free rate, and an AR(1) monthly
    inflation process converts real to nominal and produces the CPI level
    series (which starts one month early so the whole span is deflatable).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    end_year = start_year + n_years - 1
    days = pd.bdate_range(f"{start_year}-01-01", f"{end_year}-12-31")
    n_days = len(days)

    dt = 1.0 / TRADING_DAYS_PER_YEAR
    gen = RngStream(seed, 0).generator()
    shocks = draw_interval_shocks(params, costs, dt, gen, n_days)
    index_real = index_gross_from_shocks(params, dt, shocks) - 1.0
    tbill_real = np.full(n_days, np.exp(params.r * dt) - 1.0)

    months = pd.period_range(f"{start_year}-01", f"{end_year}-12", freq="M")
    phi, monthly_mean = 0.6, (1.0 + annual_inflation) ** (1.0 / 12.0) - 1.0
    infl_gen = RngStream(seed, 1).generator()
    pi = np.empty(len(months))
    state = monthly_mean
    for i in range(len(months)):
        state = monthly_mean + phi * (state - monthly_mean) + 0.002 * infl_gen.standard_normal()
        pi[i] = state
    cpi_levels = 100.0 * np.concatenate([[1.0], np.cumprod(1.0 + pi)])
    cpi_index = pd.period_range(months[0] - 1, months[-1], freq="M").to_timestamp(how="end").normalize()

    day_month = days.to_period("M")
    days_in_month = pd.Series(1, index=day_month).groupby(level=0).sum()
    pi_by_month = pd.Series(pi, index=months)
    daily_pi = ((1.0 + pi_by_month.reindex(day_month).to_numpy())
                ** (1.0 / days_in_month.reindex(day_month).to_numpy()) - 1.0)
    index_nominal = (1.0 + index_real) * (1.0 + daily_pi) - 1.0
    tbill_nominal = (1.0 + tbill_real) * (1.0 + daily_pi) - 1.0

    paths = {
        "index": out_dir / "index_daily.csv",
        "tbill": out_dir / "tbill_daily.csv",
        "cpi": out_dir / "cpi_monthly.csv",
    }
    write_series_csv(pd.Series(index_nominal, index=days), paths["index"])
    write_series_csv(pd.Series(tbill_nominal, index=days), paths["tbill"])
    write_series_csv(pd.Series(cpi_levels, index=cpi_index), paths["cpi"])
    return paths


def build_real_proxy_frame(index_csv, tbill_csv, cpi_csv,
                           costs: EtfCosts = BASE_COSTS) -> pd.DataFrame:
    """Full ingestion chain: CSVs -> monthly real (letf, vetf, tbill) frame."""
    index_daily = load_series_csv(index_csv)
    tbill_daily = load_series_csv(tbill_csv)
    cpi_levels = load_series_csv(cpi_csv)
    proxies = build_proxy_returns(index_daily, tbill_daily, costs)
    real = {asset: to_real(proxies[asset], cpi_levels)
            for asset in ("letf", "vetf", "tbill")}
    return joint_monthly_frame(real["letf"], real["vetf"], real["tbill"])


def historical_window(frame: pd.DataFrame, start_month: str,
                      n_months: int = 120) -> np.ndarray:
    """Extract one contiguous (n_months, 3) window of joint returns."""
    values = _source_values(frame)
    start = pd.Period(start_month, freq="M")
    index = frame.index
    if not isinstance(index, pd.PeriodIndex):
        index = pd.DatetimeIndex(index).to_period("M")
    positions = index.get_indexer([start])
    if positions[0] < 0:
        raise ValueError(f"start month {start_month} not covered by the data")
    pos = positions[0]
    if pos + n_months > len(index):
        raise ValueError(f"window of {n_months} months from {start_month} "
                         f"exceeds data coverage")
    return values[pos:pos + n_months]
