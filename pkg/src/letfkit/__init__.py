"""Leveraged-ETF portfolio analytics toolkit.

Exact GBM / jump-diffusion sampling of index, leveraged-fund, and bond
returns; closed-form payoff curves; a paired-path Monte Carlo engine with
Omega-ratio statistics; a historical-data pipeline with a stationary block
bootstrap; and a trainable dynamic allocation policy.
"""

__version__ = "0.1.0"

from .engine import (FixedWeight, PairedPathResult, RebalanceSchedule,
                     SimulationError, SimulationResult, run_table_experiment,
                     simulate_paired_paths)
from .models import (BASE_COSTS, GBM_PRESET, KOU_PRESET, PRESETS, EtfCosts,
                     GbmModelParams, JumpModelParams, RngStream,
                     bond_gross_return, kappa, load_model_config,
                     sample_index_gross_return, sample_letf_gross_return,
                     sample_paired_gross_returns)
from .payoffs import (PayoffCurve, StaticPortfolioSpec, drag_factor,
                      jump_adjustment_factor, letf_payoff_gbm,
                      letf_payoff_with_jumps, payoff_curve, vetf_payoff)
from .pipeline import (ASSET_ORDER, BootstrapConfig, BootstrapSampler,
                       ReturnSeries, ScenarioSet, build_proxy_returns,
                       build_real_proxy_frame, generate_synthetic_market,
                       historical_window, joint_monthly_frame, load_series_csv,
                       monthly_inflation, stationary_block_bootstrap, to_nominal,
                       to_real)
from .policy import (CdObjectiveConfig, NetworkPolicy, PolicyNetwork,
                     TrainingConfig, TrainingDivergedError, cd_loss,
                     export_policy_heatmap, gradient_check, init_network,
                     load_policy, policy_forward, save_policy, train)
from .stats import (OmegaResult, PercentileBands, StatsSummary, empirical_cdf,
                    expected_shortfall, mean_with_stderr, omega,
                    percentile_bands, sample_quantile, summarize)
