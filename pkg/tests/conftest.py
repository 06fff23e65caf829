"""Shared fixtures: stand-in market data and trained policies.

The expensive artifacts (98-year synthetic dataset, trained allocation
policies) are built once per session and shared between the unit tests and
the acceptance suite.
"""

import pytest

from letfkit import (BASE_COSTS, BootstrapSampler, CdObjectiveConfig,
                     NetworkPolicy, RebalanceSchedule, TrainingConfig,
                     build_real_proxy_frame, generate_synthetic_market,
                     init_network, simulate_paired_paths, train)

QUARTERLY = RebalanceSchedule(horizon=10.0, interval=0.25)

# validated training recipe for the reduced-scale acceptance runs
ACCEPTANCE_TRAINING = TrainingConfig(
    n_training_paths=50_000, minibatch_size=256, iterations=3000,
    learning_rate=3e-3, lr_decay=0.5, lr_decay_every=1200, seed=11,
    validation_paths=4096, eval_every=250)


@pytest.fixture(scope="session")
def standin_market_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("standin")
    generate_synthetic_market(out, n_years=98, seed=90210)
    return out


@pytest.fixture(scope="session")
def small_market_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("standin_small")
    generate_synthetic_market(out, n_years=3, seed=4242)
    return out


@pytest.fixture(scope="session")
def proxy_frame(standin_market_dir):
    d = standin_market_dir
    return build_real_proxy_frame(d / "index_daily.csv", d / "tbill_daily.csv",
                                  d / "cpi_monthly.csv")


@pytest.fixture(scope="session")
def bootstrap_sampler(proxy_frame):
    return BootstrapSampler.from_frame(proxy_frame, expected_block_size=6,
                                       n_periods=120, seed=7, compound_group=3)


@pytest.fixture(scope="session")
def heldout_scenarios(bootstrap_sampler):
    return bootstrap_sampler.scenario_set(50_000, stream_id=(1 << 40) + 1)


@pytest.fixture(scope="session")
def trained_policies(bootstrap_sampler):
    """CD-trained policies for both outperformance targets, plus wall time."""
    import time

    results = {}
    started = time.perf_counter()
    for delta in (0.02, 0.04):
        cd = CdObjectiveConfig(delta=delta, schedule=QUARTERLY, vetf_alpha=0.6)
        net = init_network(horizon=QUARTERLY.horizon, seed=ACCEPTANCE_TRAINING.seed)
        results[delta] = train(net, bootstrap_sampler, cd, ACCEPTANCE_TRAINING)
    results["train_seconds"] = time.perf_counter() - started
    return results


@pytest.fixture(scope="session")
def policy_evaluations(trained_policies, heldout_scenarios):
    """Held-out paired-path simulations of both trained policies."""
    out = {}
    for delta in (0.02, 0.04):
        out[delta] = simulate_paired_paths(
            heldout_scenarios, BASE_COSTS, QUARTERLY,
            NetworkPolicy(trained_policies[delta].network), vetf_alpha=0.6,
            n_paths=heldout_scenarios.n_paths, seed=1, record_paths=True)
    return out
