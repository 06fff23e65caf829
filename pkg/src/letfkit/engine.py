"""Paired-path Monte Carlo engine for LETF and VETF portfolios.

Rolls a leveraged-fund portfolio and its vanilla benchmark forward over a
shared rebalancing grid, feeding both from identical market randomness per
interval so that the pathwise ratio P_letf / P_vetf is meaningful.  Market
randomness comes either from a parametric model (exact interval sampling)
or from a bootstrapped scenario set.

Paths are processed in fixed-size blocks, each with its own counter-based
random stream, so results are reproducible bit-for-bit regardless of the
number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Protocol, Union

import numpy as np

from .models import (EtfCosts, ModelParams, RngStream, bond_gross_return,
                     draw_interval_shocks, index_gross_from_shocks,
                     letf_gross_from_shocks)
from .pipeline import ScenarioSet
from .stats import StatsSummary, summarize

__all__ = [
    "RebalanceSchedule",
    "AllocationRule",
    "FixedWeight",
    "PairedPathResult",
    "SimulationResult",
    "SimulationError",
    "ExperimentCell",
    "simulate_paired_paths",
    "run_table_experiment",
    "DEFAULT_BLOCK_SIZE",
]

DEFAULT_BLOCK_SIZE = 16384


class SimulationError(RuntimeError):
    """Numerical failure inside a simulation, with path/step diagnostics."""


@dataclass(frozen=True)
class RebalanceSchedule:
    """Even rebalancing grid t_n = n * interval covering [0, horizon]."""

    horizon: float
    interval: float

    def __post_init__(self):
        if self.interval <= 0 or self.horizon <= 0:
            raise ValueError("horizon and interval must be positive")
        steps = self.horizon / self.interval
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError(
                f"horizon {self.horizon} is not a positive multiple of interval {self.interval}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.interval))

    def times(self) -> np.ndarray:
        """Rebalancing decision times t_0 .. t_{n-1}."""
        return np.arange(self.n_steps) * self.interval


class AllocationRule(Protocol):
    """Anything that maps (time, wealth levels) to fund weights in [0, 1]."""

    def allocations(self, t: float, letf_wealth: np.ndarray,
                    vetf_wealth: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FixedWeight:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"allocation must lie in [0, 1], got {self.alpha}")

    def allocations(self, t, letf_wealth, vetf_wealth):
        return np.full_like(letf_wealth, self.alpha)


@dataclass(frozen=True)
class PairedPathResult:
    """Single-path view: wealth levels at every grid time plus the terminal ratio."""

    times: np.ndarray
    letf_values: np.ndarray
    vetf_values: np.ndarray
    allocations: np.ndarray
    terminal_ratio: float


@dataclass
class SimulationResult:
    schedule: RebalanceSchedule
    seed: int
    terminal_letf: np.ndarray
    terminal_vetf: np.ndarray
    terminal_index: Optional[np.ndarray]
    ratio_paths: Optional[np.ndarray]       # (n_paths, n_steps + 1)
    letf_paths: Optional[np.ndarray]
    vetf_paths: Optional[np.ndarray]
    allocations: Optional[np.ndarray]       # (n_paths, n_steps)

    @property
    def n_paths(self) -> int:
        return self.terminal_letf.size

    @property
    def terminal_ratio(self) -> np.ndarray:
        return self.terminal_letf / self.terminal_vetf

    def path(self, i: int) -> PairedPathResult:
        if self.letf_paths is None:
            raise ValueError("per-path values were not recorded; pass record_paths=True")
        times = np.arange(self.schedule.n_steps + 1) * self.schedule.interval
        return PairedPathResult(
            times=times,
            letf_values=self.letf_paths[i],
            vetf_values=self.vetf_paths[i],
            allocations=self.allocations[i],
            terminal_ratio=float(self.terminal_letf[i] / self.terminal_vetf[i]),
        )


def _check_returns(r: np.ndarray, name: str, step: int, path_offset: int) -> None:
    bad = ~np.isfinite(r)
    if bad.any():
        first = int(np.argmax(bad))
        raise SimulationError(
            f"non-finite {name} return at path {path_offset + first}, step {step}")


def _simulate_block(model, costs, schedule, letf_policy, vetf_alpha, block_size,
                    stream: Optional[RngStream], path_offset, mode, record_paths,
                    out):
    """Fill one block of paths into the preallocated output arrays."""
    dt = schedule.interval
    n_steps = schedule.n_steps
    scenario_mode = isinstance(model, ScenarioSet)
    gen = stream.generator() if stream is not None else None

    letf_wealth = np.ones(block_size)
    vetf_wealth = np.ones(block_size)
    index_level = np.ones(block_size)
    if mode == "hold":
        alloc0 = letf_policy.allocations(0.0, letf_wealth, vetf_wealth)
        letf_leg, letf_bond = alloc0.copy(), 1.0 - alloc0
        vetf_leg = vetf_alpha * np.ones(block_size)
        vetf_bond = (1.0 - vetf_alpha) * np.ones(block_size)

    if record_paths:
        out["letf_paths"][path_offset:path_offset + block_size, 0] = 1.0
        out["vetf_paths"][path_offset:path_offset + block_size, 0] = 1.0

    for n in range(n_steps):
        if scenario_mode:
            rows = model.returns[path_offset:path_offset + block_size, n, :]
            letf_ret, vetf_ret, bond_ret = rows[:, 0], rows[:, 1], rows[:, 2]
            for name, r in (("letf", letf_ret), ("vetf", vetf_ret), ("tbill", bond_ret)):
                _check_returns(r, name, n, path_offset)
        else:
            shocks = draw_interval_shocks(model, costs, dt, gen, block_size)
            index_gross = index_gross_from_shocks(model, dt, shocks)
            letf_ret = letf_gross_from_shocks(model, costs, dt, shocks) - 1.0
            vetf_ret = math.exp(-costs.c_v * dt) * index_gross - 1.0
            bond_ret = bond_gross_return(model, dt) - 1.0
            index_level *= index_gross

        if mode == "hold":
            # weight actually held at the decision time, after drift
            alloc = np.where(letf_wealth > 0, letf_leg / np.where(letf_wealth > 0, letf_wealth, 1.0), 0.0)
            letf_leg = letf_leg * (1.0 + letf_ret)
            letf_bond = letf_bond * (1.0 + bond_ret)
            vetf_leg = vetf_leg * (1.0 + vetf_ret)
            vetf_bond = vetf_bond * (1.0 + bond_ret)
            letf_wealth = letf_leg + letf_bond
            vetf_wealth = vetf_leg + vetf_bond
        else:
            alloc = letf_policy.allocations(n * dt, letf_wealth, vetf_wealth)
            letf_wealth = letf_wealth * (alloc * (1.0 + letf_ret)
                                         + (1.0 - alloc) * (1.0 + bond_ret))
            vetf_wealth = vetf_wealth * (vetf_alpha * (1.0 + vetf_ret)
                                         + (1.0 - vetf_alpha) * (1.0 + bond_ret))

        if record_paths:
            sl = slice(path_offset, path_offset + block_size)
            out["letf_paths"][sl, n + 1] = letf_wealth
            out["vetf_paths"][sl, n + 1] = vetf_wealth
            out["allocations"][sl, n] = alloc

    sl = slice(path_offset, path_offset + block_size)
    out["terminal_letf"][sl] = letf_wealth
    out["terminal_vetf"][sl] = vetf_wealth
    if not scenario_mode:
        out["terminal_index"][sl] = index_level


def simulate_paired_paths(model: Union[ModelParams, ScenarioSet], costs: EtfCosts,
                          schedule: RebalanceSchedule, letf_policy: AllocationRule,
                          vetf_alpha: float, n_paths: int, seed: int, *,
                          mode: str = "rebalance", record_paths: bool = False,
                          n_threads: int = 1, block_size: int = DEFAULT_BLOCK_SIZE,
                          stream_namespace: int = 0) -> SimulationResult:
    """Simulate paired LETF/VETF portfolio paths on the rebalancing grid.

    `mode="rebalance"` resets weights every interval; `mode="hold"` sets
    the split once at t=0 and lets both legs drift.  In scenario mode the
    bond leg accrues the bootstrapped T-bill return; in parametric mode it
    accrues exp(r * dt) - 1.  Initial wealth is normalized to one.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if not 0.0 <= vetf_alpha <= 1.0:
        raise ValueError(f"vetf_alpha must lie in [0, 1], got {vetf_alpha}")
    if mode not in ("rebalance", "hold"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "hold" and not isinstance(letf_policy, FixedWeight):
        raise ValueError("hold mode requires a fixed-weight policy")
    scenario_mode = isinstance(model, ScenarioSet)
    if scenario_mode:
        if model.n_periods < schedule.n_steps:
            raise ValueError(
                f"scenario set provides {model.n_periods} periods but the "
                f"schedule needs {schedule.n_steps}")
        if model.n_paths < n_paths:
            raise ValueError(
                f"scenario set provides {model.n_paths} paths, requested {n_paths}")

    n_steps = schedule.n_steps
    out = {
        "terminal_letf": np.empty(n_paths),
        "terminal_vetf": np.empty(n_paths),
        "terminal_index": np.empty(n_paths) if not scenario_mode else None,
        "letf_paths": np.empty((n_paths, n_steps + 1)) if record_paths else None,
        "vetf_paths": np.empty((n_paths, n_steps + 1)) if record_paths else None,
        "allocations": np.empty((n_paths, n_steps)) if record_paths else None,
    }

    offsets = list(range(0, n_paths, block_size))

    def run_block(block_index: int) -> None:
        offset = offsets[block_index]
        size = min(block_size, n_paths - offset)
        stream = None if scenario_mode else RngStream(seed, stream_namespace + block_index)
        _simulate_block(model, costs, schedule, letf_policy, vetf_alpha, size,
                        stream, offset, mode, record_paths, out)

    if n_threads > 1 and len(offsets) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run_block, range(len(offsets))))
    else:
        for b in range(len(offsets)):
            run_block(b)

    result = SimulationResult(
        schedule=schedule, seed=seed,
        terminal_letf=out["terminal_letf"], terminal_vetf=out["terminal_vetf"],
        terminal_index=out["terminal_index"],
        ratio_paths=(out["letf_paths"] / out["vetf_paths"]) if record_paths else None,
        letf_paths=out["letf_paths"], vetf_paths=out["vetf_paths"],
        allocations=out["allocations"],
    )
    if np.any(result.terminal_vetf <= 0) or not np.all(np.isfinite(result.terminal_ratio)):
        bad = int(np.argmax(~np.isfinite(result.terminal_ratio) | (result.terminal_vetf <= 0)))
        raise SimulationError(f"invalid terminal ratio at path {bad}")
    return result


@dataclass(frozen=True)
class ExperimentCell:
    """Summary statistics for one (allocation, interval) experiment cell."""

    label: str
    summary: StatsSummary
    terminal_ratios: Optional[np.ndarray] = None


def run_table_experiment(model, costs, alphas, intervals, vetf_alpha, horizon,
                         n_paths, seed, *, mode: str = "rebalance",
                         n_threads: int = 1,
                         keep_ratios: bool = False) -> list[ExperimentCell]:
    """One summary row per (allocation, rebalancing interval) cell.

    With `keep_ratios` the raw per-path terminal ratios ride along for
    external analysis.
    """
    cells: list[ExperimentCell] = []
    for cell_index, alpha in enumerate(alphas):
        for j, interval in enumerate(intervals):
            schedule = RebalanceSchedule(horizon=horizon, interval=interval)
            namespace = (cell_index * len(intervals) + j) << 32
            result = simulate_paired_paths(
                model, costs, schedule, FixedWeight(alpha), vetf_alpha,
                n_paths, seed, mode=mode, n_threads=n_threads,
                stream_namespace=namespace)
            ratio = result.terminal_ratio
            cells.append(ExperimentCell(
                label=f"alpha={alpha:g} dt={interval:g}",
                summary=summarize(ratio),
                terminal_ratios=ratio if keep_ratios else None))
    return cells
