"""Command-line front end: registry, exit codes, output schemas, determinism."""

import csv
import json

import numpy as np
import pytest

from letfkit.cli import (DEFAULT_START_MONTHS, EXPERIMENTS, ExperimentManifest,
                         main, run)
from letfkit.stats import STATS_CSV_COLUMNS

TINY_TRAINING = {"iterations": 40, "minibatch_size": 32, "validation_paths": 64,
                 "eval_every": 20}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_registry_covers_all_reported_tables_and_figures():
    assert set(EXPERIMENTS) == {"table2", "table3", "table4", "table5", "table6",
                                "fig2", "fig4", "fig5", "fig7"}


def test_manifest_hash_tracks_semantic_fields(tmp_path):
    base = ExperimentManifest(experiment="table2", seed=1, paths=100,
                              out_dir=tmp_path)
    same = ExperimentManifest(experiment="table2", seed=1, paths=100,
                              out_dir=tmp_path / "elsewhere", threads=8)
    different = ExperimentManifest(experiment="table2", seed=2, paths=100,
                                   out_dir=tmp_path)
    assert base.hash() == same.hash()
    assert base.hash() != different.hash()
    assert base.hash() != ExperimentManifest(experiment="table2", seed=1,
                                             paths=100, out_dir=tmp_path,
                                             overrides={"vetf_alpha": 0.5}).hash()


def test_unknown_experiment_exits_2(tmp_path, capsys):
    assert main(["--experiment", "table99", "--out", str(tmp_path)]) == 2
    assert "unknown experiment" in capsys.readouterr().err


def test_unknown_flag_exits_2(tmp_path):
    assert main(["--experiment", "table2", "--frobnicate"]) == 2


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["--experiment", "table2", "--config", str(bad),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "cannot parse config" in capsys.readouterr().err


def test_table2_outputs_and_determinism(tmp_path, capsys):
    args = ["--experiment", "table2", "--paths", "2000", "--seed", "7",
            "--out", str(tmp_path / "a")]
    assert main(args) == 0
    out_path = tmp_path / "a" / "table2_stats.csv"
    assert str(out_path) in capsys.readouterr().out
    rows = read_csv(out_path)
    assert rows[0] == STATS_CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == ["alpha=0.3 dt=1", "alpha=0.45 dt=1"]

    assert main(["--experiment", "table2", "--paths", "2000", "--seed", "7",
                 "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "table2_stats.csv").read_bytes() == \
        (tmp_path / "b" / "table2_stats.csv").read_bytes()


def test_model_config_override(tmp_path):
    # a parameter file with doubled fees shifts the whole distribution down
    config = tmp_path / "model.json"
    config.write_text(json.dumps({
        "mu": 0.0818, "sigma": 0.1849, "r": 0.0032, "lambda": 0.0,
        "p_up": 0.5, "eta1": 2.0, "eta2": 2.0,
        "c_ell": 0.10, "c_v": 0.0, "beta": 2.0}))
    base = ExperimentManifest(experiment="table2", paths=4000, seed=3,
                              out_dir=tmp_path / "base")
    heavy = ExperimentManifest(experiment="table2", paths=4000, seed=3,
                               out_dir=tmp_path / "heavy",
                               overrides={"model_config": str(config)})
    run(base)
    run(heavy)
    base_mean = float(read_csv(tmp_path / "base" / "table2_stats.csv")[1][1])
    heavy_mean = float(read_csv(tmp_path / "heavy" / "table2_stats.csv")[1][1])
    assert heavy_mean < base_mean


def test_all_bond_benchmark_tracks_tbill_compounding(tmp_path, standin_market_dir,
                                                     proxy_frame):
    from letfkit import historical_window
    overrides = {"data_dir": str(standin_market_dir),
                 "training": dict(TINY_TRAINING),
                 "vetf_alpha": 0.0, "start_months": ["1970-01"]}
    manifest = ExperimentManifest(experiment="table6", paths=500,
                                  out_dir=tmp_path, overrides=overrides)
    run(manifest)
    rows = read_csv(tmp_path / "table6_wealth.csv")
    vetf_terminal = float(rows[1][1])
    window = historical_window(proxy_frame, "1970-01", 120)
    expected = 100.0 * np.prod(1.0 + window[:, 2])
    assert vetf_terminal == pytest.approx(expected, rel=1e-12)


def test_run_record_written(tmp_path):
    manifest = ExperimentManifest(experiment="table2", seed=3, paths=500,
                                  out_dir=tmp_path)
    record = run(manifest)
    payload = json.loads((tmp_path / "table2_run.json").read_text())
    assert payload["manifest_hash"] == manifest.hash()
    assert payload["outputs"] == record.outputs
    assert payload["wall_time_s"] >= 0.0


def test_fig2_difference_sign_structure(tmp_path):
    manifest = ExperimentManifest(experiment="fig2", out_dir=tmp_path)
    run(manifest)
    rows = read_csv(tmp_path / "fig2_payoff_alpha30.csv")
    assert rows[0] == ["s", "P_ell_over_W0", "P_v_over_W0", "difference"]
    s = np.array([float(r[0]) for r in rows[1:]])
    diff = np.array([float(r[3]) for r in rows[1:]])
    assert diff[np.argmin(np.abs(s - 1.0))] < 0
    assert diff[0] > 0 and diff[-1] > 0


def test_table4_cells(tmp_path):
    manifest = ExperimentManifest(experiment="table4", paths=2000, out_dir=tmp_path)
    run(manifest)
    rows = read_csv(tmp_path / "table4_stats.csv")
    assert [r[0] for r in rows[1:]] == ["alpha=0.3 yearly", "alpha=0.45 yearly",
                                        "alpha=0.45 quarterly", "alpha=0.45 monthly"]


def test_fig4_band_and_cdf_outputs(tmp_path):
    manifest = ExperimentManifest(experiment="fig4", paths=2000, out_dir=tmp_path)
    run(manifest)
    bands = read_csv(tmp_path / "fig4_ratio_bands.csv")
    assert bands[0] == ["time", "p5", "p20", "p50", "p80", "p95"]
    assert len(bands) == 12  # t = 0 .. 10 annual
    cdf = read_csv(tmp_path / "fig4_ratio_cdf.csv")
    assert cdf[0] == ["value", "cdf"]
    probs = [float(r[1]) for r in cdf[1:]]
    assert probs == sorted(probs)
    assert probs[-1] == pytest.approx(1.0)


@pytest.fixture()
def policy_overrides(standin_market_dir):
    return {"data_dir": str(standin_market_dir), "training": dict(TINY_TRAINING)}


def test_table5_trains_and_reports(tmp_path, policy_overrides):
    manifest = ExperimentManifest(experiment="table5", paths=2000,
                                  out_dir=tmp_path, overrides=policy_overrides)
    run(manifest)
    rows = read_csv(tmp_path / "table5_stats.csv")
    assert [r[0] for r in rows[1:]] == ["cd020 quarterly", "cd040 quarterly"]
    assert (tmp_path / "policy_cd020.bin").exists()
    assert (tmp_path / "policy_cd040.bin").exists()
    means = [float(r[1]) for r in rows[1:]]
    assert all(m > 0 for m in means)


def test_table6_historical_wealth(tmp_path, policy_overrides):
    manifest = ExperimentManifest(experiment="table6", paths=2000,
                                  out_dir=tmp_path, overrides=policy_overrides)
    run(manifest)
    rows = read_csv(tmp_path / "table6_wealth.csv")
    assert rows[0] == ["start_month", "vetf", "cd020", "cd040"]
    assert [r[0] for r in rows[1:]] == DEFAULT_START_MONTHS
    wealth = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert np.all(wealth > 0)


def test_fig7_heatmap_and_alpha_bands(tmp_path, policy_overrides):
    manifest = ExperimentManifest(experiment="fig7", paths=2000,
                                  out_dir=tmp_path, overrides=policy_overrides)
    run(manifest)
    heat = read_csv(tmp_path / "fig7_heatmap_cd020.csv")
    assert heat[0] == ["t", "difference", "alpha"]
    t0_rows = [r for r in heat[1:] if float(r[0]) == 0.0]
    assert len(t0_rows) == 1 and float(t0_rows[0][1]) == 0.0
    alphas = np.array([float(r[2]) for r in heat[1:]])
    assert np.all((alphas >= 0) & (alphas <= 1))
    bands = read_csv(tmp_path / "fig7_alpha_bands_cd020.csv")
    assert bands[0] == ["time", "p5", "p20", "p50", "p80", "p95"]
    assert len(bands) == 41  # one row per decision time


def test_configured_policy_files_are_loaded(tmp_path, policy_overrides):
    first = ExperimentManifest(experiment="table5", paths=1000,
                               out_dir=tmp_path / "train", overrides=policy_overrides)
    run(first)
    overrides = dict(policy_overrides)
    overrides["policies"] = {
        "cd020": str(tmp_path / "train" / "policy_cd020.bin"),
        "cd040": str(tmp_path / "train" / "policy_cd040.bin"),
    }
    second = ExperimentManifest(experiment="table5", paths=1000,
                                out_dir=tmp_path / "reuse", overrides=overrides)
    record = run(second)
    assert not (tmp_path / "reuse" / "policy_cd020.bin").exists()
    assert (tmp_path / "reuse" / "table5_stats.csv").exists()
    assert sorted(p.rsplit("/", 1)[-1] for p in record.outputs) == [
        "table5_cd020_quarterly.csv", "table5_cd040_quarterly.csv",
        "table5_stats.csv"]
