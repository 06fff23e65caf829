"""Policy network: structural constraints, gradients, training behavior."""

import math

import numpy as np
import pytest

from letfkit import (BASE_COSTS, CdObjectiveConfig, NetworkPolicy,
                     RebalanceSchedule, ScenarioSet, TrainingConfig,
                     TrainingDivergedError, cd_loss, gradient_check,
                     init_network, load_policy, policy_forward, save_policy,
                     simulate_paired_paths, train)
from letfkit.policy import export_policy_heatmap

SHORT = RebalanceSchedule(horizon=2.0, interval=0.25)


def zero_net(horizon=2.0):
    net = init_network(horizon=horizon, seed=0)
    return net.with_parameters([np.zeros_like(p) for p in net.parameters()])


def random_scenarios(n_paths, n_steps, seed=0):
    gen = np.random.default_rng(seed)
    letf = gen.normal(0.02, 0.10, (n_paths, n_steps))
    vetf = gen.normal(0.012, 0.05, (n_paths, n_steps))
    bond = gen.normal(0.002, 0.001, (n_paths, n_steps))
    return np.stack([letf, vetf, bond], axis=2)


# ---------------------------------------------------------------------------
# structural output constraint
# ---------------------------------------------------------------------------

def test_zero_weight_network_outputs_half():
    alpha = policy_forward(zero_net(), 1.0, [0.5, 1.0, 2.0], [1.0, 1.0, 1.0])
    np.testing.assert_allclose(alpha, 0.5)


def test_output_always_inside_unit_box():
    # a million random states including the extremes of the feature ranges
    gen = np.random.default_rng(7)
    net = init_network(horizon=10.0, seed=3)
    big = net.with_parameters([100.0 * gen.standard_normal(p.shape)
                               for p in net.parameters()])
    n = 333_331
    wealth = np.concatenate([[0.0, 1e3, 1e-9], gen.lognormal(0, 2, n)])
    bench = np.concatenate([[1e3, 0.0, 1.0], gen.lognormal(0, 2, n)])
    for t in (0.0, 5.0, 10.0):
        alpha = policy_forward(big, t, wealth, bench)
        assert np.all((alpha >= 0.0) & (alpha <= 1.0))


def test_non_finite_features_rejected():
    net = zero_net()
    with pytest.raises(ValueError, match="finite"):
        policy_forward(net, math.nan, [1.0], [1.0])
    with pytest.raises(ValueError, match="finite"):
        policy_forward(net, 1.0, [math.inf], [1.0])


# ---------------------------------------------------------------------------
# tracking loss
# ---------------------------------------------------------------------------

def test_cd_loss_zero_for_perfect_tracking():
    # identical fund/benchmark returns, matching constant policy, zero target
    returns = random_scenarios(30, SHORT.n_steps, seed=1)
    returns[:, :, 0] = returns[:, :, 1]  # letf column equals vetf column
    config = CdObjectiveConfig(delta=0.0, schedule=SHORT, vetf_alpha=0.5)
    loss = cd_loss(zero_net(), returns, config)
    assert loss == pytest.approx(0.0, abs=1e-24)


def test_cd_loss_initial_term_is_zero():
    single = RebalanceSchedule(horizon=0.25, interval=0.25)
    returns = np.array([[[0.0, 0.0, 0.0]]])
    config = CdObjectiveConfig(delta=0.0, schedule=single, vetf_alpha=0.6)
    assert cd_loss(zero_net(0.25), returns, config) == pytest.approx(0.0, abs=1e-30)


def test_cd_loss_single_step_hand_oracle():
    single = RebalanceSchedule(horizon=0.25, interval=0.25)
    returns = np.array([[[0.30, 0.15, 0.0]]])
    config = CdObjectiveConfig(delta=0.02, schedule=single, vetf_alpha=0.6)
    net = zero_net(0.25)  # alpha = 0.5 everywhere
    fund = 0.5 * 1.30 + 0.5 * 1.0
    bench = 0.6 * 1.15 + 0.4 * 1.0
    expected = (fund - math.exp(0.02 * 0.25) * bench) ** 2
    assert cd_loss(net, returns, config) == pytest.approx(expected, rel=1e-12)


def test_cd_loss_matches_engine_recursion():
    returns = random_scenarios(50, SHORT.n_steps, seed=5)
    scen = ScenarioSet(returns, 0, "00" * 32, {})
    net = init_network(horizon=SHORT.horizon, seed=2)
    config = CdObjectiveConfig(delta=0.03, schedule=SHORT, vetf_alpha=0.6)
    result = simulate_paired_paths(scen, BASE_COSTS, SHORT, NetworkPolicy(net),
                                   0.6, 50, seed=0, record_paths=True)
    times = np.arange(SHORT.n_steps + 1) * SHORT.interval
    manual = sum(np.mean((result.letf_paths[:, n]
                          - math.exp(0.03 * t) * result.vetf_paths[:, n]) ** 2)
                 for n, t in enumerate(times))
    assert cd_loss(net, returns, config) == pytest.approx(manual, rel=1e-12)


def test_ratio_form_objective_differs_but_agrees_at_equality():
    returns = random_scenarios(20, SHORT.n_steps, seed=8)
    plain = CdObjectiveConfig(delta=0.02, schedule=SHORT, vetf_alpha=0.6)
    ratio = CdObjectiveConfig(delta=0.02, schedule=SHORT, vetf_alpha=0.6,
                              ratio_form=True)
    net = init_network(horizon=SHORT.horizon, seed=4)
    assert cd_loss(net, returns, plain) != pytest.approx(cd_loss(net, returns, ratio))

    returns[:, :, 0] = returns[:, :, 1]
    flat = CdObjectiveConfig(delta=0.0, schedule=SHORT, vetf_alpha=0.5)
    flat_ratio = CdObjectiveConfig(delta=0.0, schedule=SHORT, vetf_alpha=0.5,
                                   ratio_form=True)
    assert cd_loss(zero_net(), returns, flat) == pytest.approx(0.0, abs=1e-24)
    assert cd_loss(zero_net(), returns, flat_ratio) == pytest.approx(0.0, abs=1e-24)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_gradient_check_against_finite_differences():
    returns = random_scenarios(64, SHORT.n_steps, seed=12)
    config = CdObjectiveConfig(delta=0.02, schedule=SHORT, vetf_alpha=0.6)
    net = init_network(horizon=SHORT.horizon, seed=1)
    err = gradient_check(net, returns, config, n_checks=16, step=1e-6, seed=0)
    assert err < 1e-5


def test_gradient_check_ratio_form():
    returns = random_scenarios(64, SHORT.n_steps, seed=12)
    config = CdObjectiveConfig(delta=0.02, schedule=SHORT, vetf_alpha=0.6,
                               ratio_form=True)
    net = init_network(horizon=SHORT.horizon, seed=1)
    err = gradient_check(net, returns, config, n_checks=8, step=1e-6, seed=0)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def toy_training_problem():
    """Single-step problem whose optimal constant allocation is exactly 0.3."""
    single = RebalanceSchedule(horizon=0.25, interval=0.25)
    config = CdObjectiveConfig(delta=0.0, schedule=single, vetf_alpha=0.6)
    two = np.array([[[0.30, 0.15, 0.0]], [[-0.20, -0.10, 0.0]]])
    returns = np.tile(two, (50, 1, 1))
    return single, config, returns


def test_training_converges_to_analytic_optimum():
    single, config, returns = toy_training_problem()
    # minimizing E[(alpha * a + c)^2]: alpha* = -E[ac] / E[a^2] = 0.3 here
    net = init_network(horizon=single.horizon, seed=6)
    tc = TrainingConfig(n_training_paths=100, minibatch_size=64, iterations=4000,
                        learning_rate=0.02, lr_decay=0.4, lr_decay_every=1000,
                        seed=6, validation_paths=20, eval_every=200,
                        calibrate_features=False)
    result = train(net, returns, config, tc)
    alpha = policy_forward(result.network, 0.0, [1.0], [1.0])[0]
    assert alpha == pytest.approx(0.3, abs=1e-4)


def test_training_reproducible_and_improves():
    returns = random_scenarios(600, SHORT.n_steps, seed=20)
    config = CdObjectiveConfig(delta=0.02, schedule=SHORT, vetf_alpha=0.6)
    tc = TrainingConfig(n_training_paths=600, minibatch_size=128, iterations=120,
                        learning_rate=5e-3, seed=9, validation_paths=100,
                        eval_every=30)
    net = init_network(horizon=SHORT.horizon, seed=9)
    a = train(net, returns, config, tc)
    b = train(net, returns, config, tc)
    assert a.loss_history == b.loss_history
    assert a.validation_history == b.validation_history
    assert a.validation_history[-1][1] <= a.validation_history[0][1]
    running_min = np.minimum.accumulate([v for _, v in a.validation_history])
    assert np.all(np.diff(running_min) <= 0.0 + 1e-15)


def test_training_diverges_on_nan_scenario():
    returns = random_scenarios(100, SHORT.n_steps, seed=1)
    returns[3, 2, 0] = np.nan
    config = CdObjectiveConfig(delta=0.0, schedule=SHORT, vetf_alpha=0.6)
    tc = TrainingConfig(n_training_paths=100, minibatch_size=80, iterations=50,
                        seed=0, validation_paths=16, eval_every=10)
    with pytest.raises(TrainingDivergedError, match="iteration"):
        train(init_network(horizon=SHORT.horizon, seed=0), returns, config, tc)


# ---------------------------------------------------------------------------
# heatmap export
# ---------------------------------------------------------------------------

def test_untrained_symmetric_network_gives_constant_heatmap():
    grid = export_policy_heatmap(zero_net(), times=[0.0, 1.0, 2.0],
                                 differences=np.linspace(-0.5, 0.5, 11),
                                 vetf_reference=1.0)
    np.testing.assert_allclose(grid, 0.5)


def test_heatmap_rejects_non_finite_grid():
    with pytest.raises(ValueError, match="finite"):
        export_policy_heatmap(zero_net(), [0.0, math.nan], [0.0], 1.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_policy_round_trip_bit_exact(tmp_path):
    net = init_network(horizon=10.0, seed=42)
    gen = np.random.default_rng(0)
    net = net.with_parameters([p + gen.standard_normal(p.shape)
                               for p in net.parameters()])
    path = tmp_path / "policy.bin"
    save_policy(net, path)
    loaded = load_policy(path)
    assert loaded.horizon == net.horizon
    assert loaded.seed == net.seed
    for a, b in zip(loaded.parameters(), net.parameters()):
        assert a.tobytes() == b.tobytes()
    state = (0.7, np.array([1.3, 0.8]), np.array([1.1, 1.0]))
    np.testing.assert_array_equal(policy_forward(loaded, *state),
                                  policy_forward(net, *state))
