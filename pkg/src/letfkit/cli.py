"""Command-line front end: reproducible experiment runs with CSV outputs.

Each experiment id wires presets, seeds, and engines together, writes
plot-ready CSVs under the output directory, and records a run manifest.
Repeated runs with an identical manifest produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (FixedWeight, RebalanceSchedule, SimulationError,
                     run_table_experiment, simulate_paired_paths)
from .models import BASE_COSTS, GBM_PRESET, KOU_PRESET, load_model_config
from .payoffs import payoff_curve
from .pipeline import (BootstrapSampler, ScenarioSet, build_real_proxy_frame,
                       generate_synthetic_market, historical_window)
from .policy import (CdObjectiveConfig, NetworkPolicy, TrainingConfig,
                     TrainingDivergedError, export_policy_heatmap, init_network,
                     load_policy, save_policy, train)
from .stats import (percentile_bands, summarize, write_bands_csv, write_cdf_csv,
                    write_stats_csv)

__all__ = ["ExperimentManifest", "RunRecord", "run", "run_historical", "main",
           "EXPERIMENTS"]

THREADS_ENV_VAR = "LETFKIT_THREADS"

FULL_MC_PATHS = 100_000
FULL_BOOTSTRAP_PATHS = 500_000
QUICK_MC_PATHS = 10_000
QUICK_BOOTSTRAP_PATHS = 20_000

# start months mirroring the historical ten-year windows reported upstream
DEFAULT_START_MONTHS = ["1970-01", "1975-01", "1980-01", "1985-01", "1990-01",
                        "1995-01", "2000-01", "2005-01", "2010-01", "2013-01",
                        "2014-01"]


@dataclass(frozen=True)
class ExperimentManifest:
    experiment: str
    seed: int = 1
    paths: int | None = None
    out_dir: Path = Path("out")
    threads: int = 1
    quick: bool = False
    overrides: dict = field(default_factory=dict)

    def semantic_fields(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed,
                "paths": self.paths, "quick": self.quick,
                "overrides": self.overrides}

    def hash(self) -> str:
        blob = json.dumps(self.semantic_fields(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def mc_paths(self) -> int:
        if self.paths is not None:
            return self.paths
        return QUICK_MC_PATHS if self.quick else FULL_MC_PATHS

    def bootstrap_paths(self) -> int:
        if self.paths is not None:
            return self.paths
        return QUICK_BOOTSTRAP_PATHS if self.quick else FULL_BOOTSTRAP_PATHS


@dataclass(frozen=True)
class RunRecord:
    manifest_hash: str
    version: str
    wall_time_s: float
    outputs: list[str]

    def write(self, path: Path) -> None:
        payload = {"manifest_hash": self.manifest_hash, "version": self.version,
                   "wall_time_s": self.wall_time_s, "outputs": self.outputs}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
        tmp.replace(path)


def _model_and_costs(manifest: ExperimentManifest, preset):
    """Model preset for the experiment, overridable by a parameter file."""
    configured = manifest.overrides.get("model_config")
    if configured:
        return load_model_config(configured)
    return preset, BASE_COSTS


def _cell_filename(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label).strip("_")


def _write_ratio_csv(ratios, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("ratio\n")
        fh.writelines(repr(float(v)) + "\n" for v in ratios)


def _write_table_outputs(experiment: str, labeled_cells, out_dir: Path) -> list[Path]:
    """Per-cell terminal-ratio CSVs plus one summary CSV."""
    outputs = []
    for label, cell in labeled_cells:
        path = out_dir / f"{experiment}_{_cell_filename(label)}.csv"
        _write_ratio_csv(cell.terminal_ratios, path)
        outputs.append(path)
    summary = out_dir / f"{experiment}_stats.csv"
    write_stats_csv([(label, cell.summary) for label, cell in labeled_cells],
                    summary)
    outputs.append(summary)
    return outputs


def _run_gbm_table(manifest: ExperimentManifest, experiment: str, horizon: float,
                   mode: str) -> list[Path]:
    params, costs = _model_and_costs(manifest, GBM_PRESET)
    cells = run_table_experiment(
        params, costs,
        alphas=manifest.overrides.get("alphas", [0.30, 0.45]),
        intervals=[1.0], vetf_alpha=manifest.overrides.get("vetf_alpha", 0.60),
        horizon=horizon, n_paths=manifest.mc_paths(), seed=manifest.seed,
        mode=mode, n_threads=manifest.threads, keep_ratios=True)
    return _write_table_outputs(experiment, [(c.label, c) for c in cells],
                                manifest.out_dir)


def _run_table2(manifest: ExperimentManifest) -> list[Path]:
    return _run_gbm_table(manifest, "table2", horizon=1.0, mode="hold")


def _run_table3(manifest: ExperimentManifest) -> list[Path]:
    return _run_gbm_table(manifest, "table3", horizon=10.0, mode="rebalance")


def _run_table4(manifest: ExperimentManifest) -> list[Path]:
    interval_names = {1.0: "yearly", 0.25: "quarterly", 1.0 / 12.0: "monthly"}
    grid = manifest.overrides.get(
        "cells", [[0.30, 1.0], [0.45, 1.0], [0.45, 0.25], [0.45, 1.0 / 12.0]])
    params, costs = _model_and_costs(manifest, KOU_PRESET)
    labeled = []
    for cell_index, (alpha, interval) in enumerate(grid):
        cells = run_table_experiment(
            params, costs, alphas=[alpha], intervals=[interval],
            vetf_alpha=manifest.overrides.get("vetf_alpha", 0.60), horizon=10.0,
            n_paths=manifest.mc_paths(), seed=manifest.seed + cell_index,
            n_threads=manifest.threads, keep_ratios=True)
        name = interval_names.get(interval, f"dt={interval:g}")
        labeled.append((f"alpha={alpha:g} {name}", cells[0]))
    return _write_table_outputs("table4", labeled, manifest.out_dir)


def _data_dir(manifest: ExperimentManifest) -> Path:
    configured = manifest.overrides.get("data_dir")
    data_dir = Path(configured) if configured else manifest.out_dir / "standin_data"
    marker = data_dir / "index_daily.csv"
    if not marker.exists():
        if configured:
            raise FileNotFoundError(f"data directory {data_dir} has no index_daily.csv")
        generate_synthetic_market(data_dir,
                                  seed=manifest.overrides.get("data_seed", 90210))
    return data_dir


def _proxy_frame(manifest: ExperimentManifest):
    d = _data_dir(manifest)
    return build_real_proxy_frame(d / "index_daily.csv", d / "tbill_daily.csv",
                                  d / "cpi_monthly.csv")


def _policy_configs(manifest: ExperimentManifest) -> tuple[CdObjectiveConfig, TrainingConfig]:
    schedule = RebalanceSchedule(horizon=10.0, interval=0.25)
    overrides = manifest.overrides.get("training", {})
    defaults = dict(iterations=2_000 if manifest.quick else 20_000,
                    seed=manifest.seed)
    defaults.update(overrides)
    try:
        training = TrainingConfig(**defaults)
    except TypeError as exc:
        raise ValueError(f"bad training config: {exc}") from exc
    return (CdObjectiveConfig(delta=0.0, schedule=schedule,
                              vetf_alpha=manifest.overrides.get("vetf_alpha", 0.60)),
            training)


def _trained_policies(manifest: ExperimentManifest, sampler: BootstrapSampler,
                      deltas=(0.02, 0.04)) -> tuple[dict, list[Path]]:
    """Load policies named in the config, else train and save them."""
    base_cd, train_config = _policy_configs(manifest)
    policies, written = {}, []
    for delta in deltas:
        label = f"cd{int(round(delta * 1000)):03d}"
        configured = manifest.overrides.get("policies", {}).get(label)
        if configured:
            policies[label] = load_policy(configured)
            continue
        path = manifest.out_dir / f"policy_{label}.bin"
        cd = CdObjectiveConfig(delta=delta, schedule=base_cd.schedule,
                               vetf_alpha=base_cd.vetf_alpha)
        net = init_network(horizon=base_cd.schedule.horizon, seed=train_config.seed)
        result = train(net, sampler, cd, train_config)
        save_policy(result.network, path)
        policies[label] = result.network
        written.append(path)
    return policies, written


def _bootstrap_sampler(manifest: ExperimentManifest, frame) -> BootstrapSampler:
    return BootstrapSampler.from_frame(
        frame,
        expected_block_size=manifest.overrides.get("expected_block_size", 6),
        n_periods=120, seed=manifest.seed, compound_group=3)


def _run_table5(manifest: ExperimentManifest) -> list[Path]:
    frame = _proxy_frame(manifest)
    sampler = _bootstrap_sampler(manifest, frame)
    policies, written = _trained_policies(manifest, sampler)
    schedule = RebalanceSchedule(horizon=10.0, interval=0.25)
    test_set = sampler.scenario_set(manifest.bootstrap_paths(),
                                    stream_id=(1 << 40) + 1)
    outputs = list(written)
    rows = []
    for label, net in sorted(policies.items()):
        result = simulate_paired_paths(
            test_set, BASE_COSTS, schedule, NetworkPolicy(net),
            vetf_alpha=manifest.overrides.get("vetf_alpha", 0.60),
            n_paths=test_set.n_paths, seed=manifest.seed,
            n_threads=manifest.threads)
        ratio_path = manifest.out_dir / f"table5_{label}_quarterly.csv"
        _write_ratio_csv(result.terminal_ratio, ratio_path)
        outputs.append(ratio_path)
        rows.append((f"{label} quarterly", summarize(result.terminal_ratio)))
    out = manifest.out_dir / "table5_stats.csv"
    write_stats_csv(rows, out)
    return outputs + [out]


def run_historical(manifest: ExperimentManifest) -> list[Path]:
    """Terminal wealth of the benchmark and both trained policies on single
    historical ten-year windows, quarterly rebalancing, $100 initial wealth."""
    frame = _proxy_frame(manifest)
    sampler = _bootstrap_sampler(manifest, frame)
    policies, written = _trained_policies(manifest, sampler)
    schedule = RebalanceSchedule(horizon=10.0, interval=0.25)
    vetf_alpha = manifest.overrides.get("vetf_alpha", 0.60)
    start_months = manifest.overrides.get("start_months", DEFAULT_START_MONTHS)
    initial_wealth = 100.0

    lines = [["start_month", "vetf", "cd020", "cd040"]]
    for start in start_months:
        window = historical_window(frame, start, n_months=120)
        quarterly = (1.0 + window.reshape(40, 3, 3)).prod(axis=1) - 1.0
        scenario = quarterly[np.newaxis, :, :]
        terminal = {}
        for label, policy in [("vetf", FixedWeight(vetf_alpha)),
                              ("cd020", NetworkPolicy(policies["cd020"])),
                              ("cd040", NetworkPolicy(policies["cd040"]))]:
            scen = ScenarioSet(scenario, manifest.seed, sampler.source_hash,
                               {"start": start})
            result = simulate_paired_paths(scen, BASE_COSTS, schedule, policy,
                                           vetf_alpha=vetf_alpha, n_paths=1,
                                           seed=manifest.seed)
            wealth = result.terminal_vetf[0] if label == "vetf" else result.terminal_letf[0]
            terminal[label] = initial_wealth * wealth
        lines.append([start] + [repr(float(terminal[k])) for k in ("vetf", "cd020", "cd040")])

    out = manifest.out_dir / "table6_wealth.csv"
    out.write_text("\n".join(",".join(map(str, line)) for line in lines) + "\n")
    return written + [out]


def _run_fig2(manifest: ExperimentManifest) -> list[Path]:
    params, costs = _model_and_costs(manifest, GBM_PRESET)
    outputs = []
    for alpha in manifest.overrides.get("alphas", [0.30, 0.45]):
        curve = payoff_curve(alpha_letf=alpha,
                             alpha_vetf=manifest.overrides.get("vetf_alpha", 0.60),
                             costs=costs, params=params, horizon=1.0)
        path = manifest.out_dir / f"fig2_payoff_alpha{int(round(alpha * 100))}.csv"
        curve.write_csv(path)
        outputs.append(path)
    return outputs


def _run_ratio_figure(manifest: ExperimentManifest, preset, interval: float,
                      prefix: str) -> list[Path]:
    params, costs = _model_and_costs(manifest, preset)
    schedule = RebalanceSchedule(horizon=10.0, interval=interval)
    result = simulate_paired_paths(
        params, costs, schedule,
        FixedWeight(manifest.overrides.get("alpha", 0.45)),
        vetf_alpha=manifest.overrides.get("vetf_alpha", 0.60),
        n_paths=manifest.mc_paths(), seed=manifest.seed,
        record_paths=True, n_threads=manifest.threads)
    times = np.arange(schedule.n_steps + 1) * schedule.interval
    bands = percentile_bands(result.ratio_paths, times)
    bands_path = manifest.out_dir / f"{prefix}_ratio_bands.csv"
    cdf_path = manifest.out_dir / f"{prefix}_ratio_cdf.csv"
    write_bands_csv(bands, bands_path)
    write_cdf_csv(result.terminal_ratio, cdf_path)
    return [bands_path, cdf_path]


def _run_fig4(manifest: ExperimentManifest) -> list[Path]:
    return _run_ratio_figure(manifest, GBM_PRESET, 1.0, "fig4")


def _run_fig5(manifest: ExperimentManifest) -> list[Path]:
    return _run_ratio_figure(manifest, KOU_PRESET, 1.0 / 12.0, "fig5")


def _run_fig7(manifest: ExperimentManifest) -> list[Path]:
    frame = _proxy_frame(manifest)
    sampler = _bootstrap_sampler(manifest, frame)
    policies, written = _trained_policies(manifest, sampler)
    schedule = RebalanceSchedule(horizon=10.0, interval=0.25)
    eval_paths = min(manifest.bootstrap_paths(), 50_000)
    test_set = sampler.scenario_set(eval_paths, stream_id=(1 << 40) + 2)
    outputs = list(written)

    for label, net in sorted(policies.items()):
        result = simulate_paired_paths(
            test_set, BASE_COSTS, schedule, NetworkPolicy(net),
            vetf_alpha=manifest.overrides.get("vetf_alpha", 0.60),
            n_paths=test_set.n_paths, seed=manifest.seed,
            record_paths=True, n_threads=manifest.threads)

        # policy surface over (time, wealth difference); benchmark pinned to
        # its median path, and only the zero difference is meaningful at t=0
        decision_times = schedule.times()
        vetf_median = np.median(result.vetf_paths[:, :-1], axis=0)
        diffs = np.linspace(-0.5, 0.5, 41)
        grid = export_policy_heatmap(net, decision_times, diffs, vetf_median)
        heat_path = manifest.out_dir / f"fig7_heatmap_{label}.csv"
        with open(heat_path, "w") as fh:
            fh.write("t,difference,alpha\n")
            for i, t in enumerate(decision_times):
                cols = [np.argmin(np.abs(diffs))] if t == 0 else range(diffs.size)
                for j in cols:
                    fh.write(f"{repr(float(t))},{repr(float(diffs[j]))},"
                             f"{repr(float(grid[i, j]))}\n")
        bands = percentile_bands(result.allocations, decision_times)
        bands_path = manifest.out_dir / f"fig7_alpha_bands_{label}.csv"
        write_bands_csv(bands, bands_path)
        outputs.extend([heat_path, bands_path])
    return outputs


EXPERIMENTS = {
    "table2": _run_table2,
    "table3": _run_table3,
    "table4": _run_table4,
    "table5": _run_table5,
    "table6": run_historical,
    "fig2": _run_fig2,
    "fig4": _run_fig4,
    "fig5": _run_fig5,
    "fig7": _run_fig7,
}


def run(manifest: ExperimentManifest) -> RunRecord:
    """Execute one experiment and write its outputs plus a run record."""
    if manifest.experiment not in EXPERIMENTS:
        raise KeyError(f"unknown experiment id {manifest.experiment!r}; "
                       f"known: {sorted(EXPERIMENTS)}")
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    outputs = EXPERIMENTS[manifest.experiment](manifest)
    record = RunRecord(manifest_hash=manifest.hash(), version=__version__,
                       wall_time_s=time.perf_counter() - started,
                       outputs=[str(p) for p in outputs])
    record.write(manifest.out_dir / f"{manifest.experiment}_run.json")
    return record


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="letfkit",
        description="Reproduce leveraged-ETF portfolio experiments")
    parser.add_argument("--experiment", required=True,
                        help=f"experiment id, one of {sorted(EXPERIMENTS)}")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with experiment overrides")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--paths", type=int, default=None,
                        help="override the number of simulated paths")
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get(THREADS_ENV_VAR, "1")))
    parser.add_argument("--quick", action="store_true",
                        help="reduced path counts for smoke runs")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = _parse_args(argv if argv is not None else sys.argv[1:])
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    overrides = {}
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text())
            if not isinstance(overrides, dict):
                raise ValueError("config must be a JSON object")
        except (OSError, ValueError) as exc:
            print(f"error: cannot parse config {args.config}: {exc}", file=sys.stderr)
            return 2

    manifest = ExperimentManifest(
        experiment=args.experiment, seed=args.seed, paths=args.paths,
        out_dir=args.out, threads=args.threads, quick=args.quick,
        overrides=overrides)
    try:
        record = run(manifest)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    except (SimulationError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in record.outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
