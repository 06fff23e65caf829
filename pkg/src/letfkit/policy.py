"""Trainable dynamic allocation policy for the leveraged-fund portfolio.

A small feed-forward network maps (time, both portfolio values) to the
fund weight for the next interval.  The sigmoid output head enforces the
no-shorting, no-leverage box [0, 1] structurally.  Training minimizes the
cumulative tracking difference against an exponentially elevated benchmark
portfolio, differentiating through the full wealth recursion with the
reverse-mode tape in `autodiff`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import autodiff as ad
from .engine import RebalanceSchedule
from .models import RngStream
from .pipeline import BootstrapSampler, ScenarioSet

__all__ = [
    "PolicyNetwork",
    "NetworkPolicy",
    "CdObjectiveConfig",
    "TrainingConfig",
    "TrainResult",
    "TrainingDivergedError",
    "init_network",
    "policy_forward",
    "cd_loss",
    "train",
    "gradient_check",
    "export_policy_heatmap",
    "save_policy",
    "load_policy",
]

_WEALTH_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"training diverged at iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class PolicyNetwork:
    """Affine layers with tanh activations and a sigmoid output head.

    `feature_center`/`feature_scale` standardize the raw features
    (t / horizon, log wealth, log benchmark wealth) before the first layer.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    feature_center: np.ndarray
    feature_scale: np.ndarray
    horizon: float
    seed: int

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "PolicyNetwork":
        weights = tuple(params[2 * i] for i in range(len(self.weights)))
        biases = tuple(params[2 * i + 1] for i in range(len(self.biases)))
        return replace(self, weights=weights, biases=biases)


def init_network(horizon: float, hidden: tuple[int, ...] = (8, 8),
                 seed: int = 0) -> PolicyNetwork:
    """Fresh network with scaled-normal weights and zero biases."""
    gen = RngStream(seed, 0).generator()
    sizes = (3,) + tuple(hidden) + (1,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(gen.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return PolicyNetwork(tuple(weights), tuple(biases),
                         feature_center=np.zeros(3), feature_scale=np.ones(3),
                         horizon=float(horizon), seed=seed)


def _features(net: PolicyNetwork, t: float, letf_wealth: np.ndarray,
              vetf_wealth: np.ndarray) -> np.ndarray:
    raw = np.stack([
        np.full_like(letf_wealth, t / net.horizon),
        np.log(np.maximum(letf_wealth, _WEALTH_FLOOR)),
        np.log(np.maximum(vetf_wealth, _WEALTH_FLOOR)),
    ], axis=1)
    return (raw - net.feature_center) / net.feature_scale


def policy_forward(net: PolicyNetwork, t: float, letf_wealth,
                   vetf_wealth) -> np.ndarray:
    """Allocation in [0, 1] for each (wealth, benchmark) state at time t."""
    letf_wealth = np.atleast_1d(np.asarray(letf_wealth, dtype=np.float64))
    vetf_wealth = np.atleast_1d(np.asarray(vetf_wealth, dtype=np.float64))
    if not (math.isfinite(t) and np.all(np.isfinite(letf_wealth))
            and np.all(np.isfinite(vetf_wealth))):
        raise ValueError("policy features must be finite")
    h = _features(net, t, letf_wealth, vetf_wealth)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < len(net.weights) - 1:
            h = np.tanh(h)
    return _stable_sigmoid(h[:, 0])


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    z = np.exp(x[~positive])
    out[~positive] = z / (1.0 + z)
    return out


@dataclass(frozen=True)
class NetworkPolicy:
    """Adapter exposing a trained network to the Monte Carlo engine."""

    network: PolicyNetwork

    def allocations(self, t, letf_wealth, vetf_wealth):
        return policy_forward(self.network, t, letf_wealth, vetf_wealth)


@dataclass(frozen=True)
class CdObjectiveConfig:
    """Cumulative tracking-difference objective settings.

    The target is the benchmark portfolio elevated by exp(delta * t_n); the
    objective sums squared gaps over every grid time t_0 .. t_N including
    the horizon (the t_0 term is identically zero).  `ratio_form` switches
    to squared gaps of the wealth ratio instead (similar strategies, kept
    for comparison).
    """

    delta: float
    schedule: RebalanceSchedule
    vetf_alpha: float = 0.6
    ratio_form: bool = False

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")
        if not 0.0 <= self.vetf_alpha <= 1.0:
            raise ValueError("vetf_alpha must lie in [0, 1]")


@dataclass(frozen=True)
class TrainingConfig:
    n_training_paths: int = 500_000
    minibatch_size: int = 256
    iterations: int = 20_000
    learning_rate: float = 3e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 5_000
    seed: int = 0
    validation_paths: int = 4_096
    eval_every: int = 250
    calibrate_features: bool = True

    def __post_init__(self):
        if min(self.n_training_paths, self.minibatch_size, self.iterations,
               self.validation_paths, self.eval_every) < 1:
            raise ValueError("training sizes must be positive")


@dataclass
class TrainResult:
    network: PolicyNetwork
    loss_history: list[float]
    validation_history: list[tuple[int, float]]
    best_iteration: int


def _scenario_array(scenarios, n_steps: int) -> np.ndarray:
    arr = scenarios.returns if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("scenarios must be (n_paths, n_periods, 3)")
    if arr.shape[1] < n_steps:
        raise ValueError(f"scenarios provide {arr.shape[1]} periods, "
                         f"schedule needs {n_steps}")
    return arr[:, :n_steps, :]


def _rollout_loss(params: list[ad.Tensor], net: PolicyNetwork,
                  batch: np.ndarray, config: CdObjectiveConfig) -> ad.Tensor:
    """Tracking loss as a tape node; the benchmark rolls outside the tape."""
    schedule = config.schedule
    n_paths, n_steps = batch.shape[0], schedule.n_steps
    dt = schedule.interval
    center, scale = net.feature_center, net.feature_scale

    def tracking_term(letf_t, vetf_t, t):
        if config.ratio_form:
            gap = letf_t / ad.constant(vetf_t) - math.exp(config.delta * t)
        else:
            gap = letf_t - ad.constant(math.exp(config.delta * t) * vetf_t)
        return (gap * gap).mean()

    letf = ad.constant(np.ones(n_paths))
    vetf = np.ones(n_paths)
    loss = ad.constant(np.zeros(()))
    for n in range(n_steps):
        t = n * dt
        loss = loss + tracking_term(letf, vetf, t)

        t_col = ad.constant(np.full(n_paths, (t / net.horizon - center[0]) / scale[0]))
        lw = (ad.log(ad.clip_min(letf, _WEALTH_FLOOR)) - center[1]) * (1.0 / scale[1])
        bw = ad.constant((np.log(np.maximum(vetf, _WEALTH_FLOOR)) - center[2]) / scale[2])
        h = ad.stack_columns([t_col, lw, bw])
        n_layers = len(params) // 2
        for i in range(n_layers):
            h = h @ params[2 * i] + params[2 * i + 1]
            if i < n_layers - 1:
                h = ad.tanh(h)
        alpha = ad.sigmoid(h).reshape(n_paths)

        letf_ret, vetf_ret, bond_ret = batch[:, n, 0], batch[:, n, 1], batch[:, n, 2]
        growth = alpha * ad.constant(letf_ret - bond_ret) + ad.constant(1.0 + bond_ret)
        letf = letf * growth
        vetf = vetf * (config.vetf_alpha * (1.0 + vetf_ret)
                       + (1.0 - config.vetf_alpha) * (1.0 + bond_ret))
    # terminal tracking gap: the last allocation must answer for it too
    loss = loss + tracking_term(letf, vetf, n_steps * dt)
    return loss


def cd_loss(net: PolicyNetwork, scenarios, config: CdObjectiveConfig) -> float:
    """Average tracking loss of the policy over a scenario set (no gradients)."""
    batch = _scenario_array(scenarios, config.schedule.n_steps)
    params = [ad.constant(p) for p in net.parameters()]
    return float(_rollout_loss(params, net, batch, config).value)


def _loss_and_grad(net: PolicyNetwork, batch: np.ndarray,
                   config: CdObjectiveConfig) -> tuple[float, list[np.ndarray]]:
    params = [ad.parameter(p) for p in net.parameters()]
    loss = _rollout_loss(params, net, batch, config)
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    return float(loss.value), grads


def _calibrate_features(net: PolicyNetwork, batch: np.ndarray,
                        config: CdObjectiveConfig) -> PolicyNetwork:
    """Standardize features against a fixed-weight benchmark-weight rollout."""
    schedule = config.schedule
    n_paths = batch.shape[0]
    letf = np.ones(n_paths)
    vetf = np.ones(n_paths)
    rows = []
    for n in range(schedule.n_steps):
        t = n * schedule.interval
        rows.append(np.stack([np.full(n_paths, t / net.horizon),
                              np.log(np.maximum(letf, _WEALTH_FLOOR)),
                              np.log(np.maximum(vetf, _WEALTH_FLOOR))], axis=1))
        letf_ret, vetf_ret, bond_ret = batch[:, n, 0], batch[:, n, 1], batch[:, n, 2]
        alpha = config.vetf_alpha
        letf = letf * (alpha * (1.0 + letf_ret) + (1.0 - alpha) * (1.0 + bond_ret))
        vetf = vetf * (alpha * (1.0 + vetf_ret) + (1.0 - alpha) * (1.0 + bond_ret))
    stacked = np.concatenate(rows, axis=0)
    center = stacked.mean(axis=0)
    scale = np.maximum(stacked.std(axis=0), 0.1)
    return replace(net, feature_center=center, feature_scale=scale)


_VALIDATION_STREAM = 1 << 48


def train(net: PolicyNetwork, scenarios: Union[ScenarioSet, np.ndarray, BootstrapSampler],
          cd_config: CdObjectiveConfig, train_config: TrainingConfig) -> TrainResult:
    """Minimize the tracking objective by Adam over minibatch gradients.

    With a `BootstrapSampler`, minibatches are regenerated on the fly from
    seeds, cycling through n_training_paths / minibatch_size distinct
    batches; a materialized scenario set is index-sampled instead.  Returns
    the parameters with the best validation loss.
    """
    n_steps = cd_config.schedule.n_steps
    sampler_mode = isinstance(scenarios, BootstrapSampler)
    if sampler_mode:
        n_distinct = max(1, train_config.n_training_paths // train_config.minibatch_size)
        val_batch = scenarios.sample(train_config.validation_paths, _VALIDATION_STREAM)
        val_batch = val_batch[:, :n_steps, :]
    else:
        pool = _scenario_array(scenarios, n_steps)
        n_val = min(train_config.validation_paths, pool.shape[0] // 5)
        if n_val < 1:
            raise ValueError("scenario set too small for a validation split")
        val_batch, pool = pool[:n_val], pool[n_val:]
        if pool.shape[0] < train_config.minibatch_size:
            raise ValueError("scenario set too small for the requested minibatch")
        picker = RngStream(train_config.seed, _VALIDATION_STREAM + 1).generator()

    if train_config.calibrate_features:
        net = _calibrate_features(net, val_batch, cd_config)

    flat_params = [p.copy() for p in net.parameters()]
    adam_m = [np.zeros_like(p) for p in flat_params]
    adam_v = [np.zeros_like(p) for p in flat_params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    loss_history: list[float] = []
    validation_history: list[tuple[int, float]] = []
    best_val = math.inf
    best_params = [p.copy() for p in flat_params]
    best_iteration = 0

    for it in range(train_config.iterations):
        if sampler_mode:
            batch = scenarios.sample(train_config.minibatch_size, it % n_distinct)
            batch = batch[:, :n_steps, :]
        else:
            sel = picker.integers(0, pool.shape[0], train_config.minibatch_size)
            batch = pool[sel]

        current = net.with_parameters(flat_params)
        loss, grads = _loss_and_grad(current, batch, cd_config)
        if not math.isfinite(loss):
            raise TrainingDivergedError(it, f"loss became {loss}")
        loss_history.append(loss)

        lr = (train_config.learning_rate
              * train_config.lr_decay ** (it // train_config.lr_decay_every))
        step = it + 1
        for j, g in enumerate(grads):
            adam_m[j] = beta1 * adam_m[j] + (1.0 - beta1) * g
            adam_v[j] = beta2 * adam_v[j] + (1.0 - beta2) * g * g
            m_hat = adam_m[j] / (1.0 - beta1**step)
            v_hat = adam_v[j] / (1.0 - beta2**step)
            flat_params[j] = flat_params[j] - lr * m_hat / (np.sqrt(v_hat) + eps)

        if (it + 1) % train_config.eval_every == 0 or it == train_config.iterations - 1:
            candidate = net.with_parameters(flat_params)
            val_loss = cd_loss(candidate, val_batch, cd_config)
            if not math.isfinite(val_loss):
                raise TrainingDivergedError(it, f"validation loss became {val_loss}")
            validation_history.append((it + 1, val_loss))
            if val_loss < best_val:
                best_val = val_loss
                best_params = [p.copy() for p in flat_params]
                best_iteration = it + 1

    return TrainResult(network=net.with_parameters(best_params),
                       loss_history=loss_history,
                       validation_history=validation_history,
                       best_iteration=best_iteration)


def gradient_check(net: PolicyNetwork, scenarios, config: CdObjectiveConfig,
                   n_checks: int = 64, step: float = 1e-6,
                   seed: int = 0) -> float:
    """Max relative error of tape gradients vs central finite differences.

    Each check perturbs the parameters along a random unit direction on a
    freshly drawn scenario batch and compares the directional derivative.
    """
    batch_pool = _scenario_array(scenarios, config.schedule.n_steps)
    gen = RngStream(seed, 0).generator()
    worst = 0.0
    for _ in range(n_checks):
        sel = gen.integers(0, batch_pool.shape[0], size=8)
        batch = batch_pool[sel]
        base = [p + 0.1 * gen.standard_normal(p.shape) for p in net.parameters()]
        probe = net.with_parameters(base)
        _, grads = _loss_and_grad(probe, batch, config)
        direction = [gen.standard_normal(p.shape) for p in base]
        norm = math.sqrt(sum(float((d * d).sum()) for d in direction))
        direction = [d / norm for d in direction]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
        plus = probe.with_parameters([p + step * d for p, d in zip(base, direction)])
        minus = probe.with_parameters([p - step * d for p, d in zip(base, direction)])
        numeric = (cd_loss(plus, batch, config) - cd_loss(minus, batch, config)) / (2 * step)
        denom = max(abs(analytic), abs(numeric), 1e-10)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def export_policy_heatmap(net: PolicyNetwork, times, differences,
                          vetf_reference) -> np.ndarray:
    """Policy surface over (time, wealth difference) with the benchmark pinned.

    `vetf_reference` gives the pinned benchmark wealth at each time (scalar
    or one value per time); the fund wealth is reference + difference.
    Returns a (n_times, n_differences) allocation matrix.
    """
    times = np.asarray(times, dtype=np.float64)
    differences = np.asarray(differences, dtype=np.float64)
    reference = np.broadcast_to(np.asarray(vetf_reference, dtype=np.float64), times.shape)
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(differences))
            and np.all(np.isfinite(reference))):
        raise ValueError("heatmap grids must be finite")
    grid = np.empty((times.size, differences.size))
    for i, (t, ref) in enumerate(zip(times, reference)):
        letf_wealth = np.maximum(ref + differences, _WEALTH_FLOOR)
        grid[i] = policy_forward(net, float(t), letf_wealth, np.full_like(letf_wealth, ref))
    return grid


# ---------------------------------------------------------------------------
# Serialization: versioned flat binary with float64 parameters
# ---------------------------------------------------------------------------

_POLICY_MAGIC = b"LFPN"
_POLICY_VERSION = 1


def save_policy(net: PolicyNetwork, path) -> None:
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_POLICY_MAGIC)
        fh.write(struct.pack("<IdqI", _POLICY_VERSION, net.horizon, net.seed, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(net.feature_center.astype(np.float64).tobytes())
        fh.write(net.feature_scale.astype(np.float64).tobytes())
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(b, dtype=np.float64).tobytes())


def load_policy(path) -> PolicyNetwork:
    with open(path, "rb") as fh:
        if fh.read(4) != _POLICY_MAGIC:
            raise ValueError(f"{path}: not a policy file")
        version, horizon, seed, n_sizes = struct.unpack("<IdqI", fh.read(24))
        if version != _POLICY_VERSION:
            raise ValueError(f"{path}: unsupported policy version {version}")
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        center = np.frombuffer(fh.read(24), dtype=np.float64).copy()
        scale = np.frombuffer(fh.read(24), dtype=np.float64).copy()
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(np.frombuffer(fh.read(8 * fan_in * fan_out),
                                         dtype=np.float64).reshape(fan_in, fan_out).copy())
            biases.append(np.frombuffer(fh.read(8 * fan_out), dtype=np.float64).copy())
    return PolicyNetwork(tuple(weights), tuple(biases), center, scale,
                         float(horizon), int(seed))
