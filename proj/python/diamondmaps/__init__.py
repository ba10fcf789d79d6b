"""Stochastic flow maps for reward alignment, on Gaussian-mixture oracles.

Thin Python facade over the C++ core (`diamondmaps._diamond`).
"""

from ._diamond import (  # noqa: F401
    CustomReward,
    DistilledDiamondMap,
    DistilledFlowMap,
    FlowMap,
    GaussianMixture,
    GlassField,
    GradientMode,
    GuidanceConfig,
    LinearReward,
    MixtureOracle,
    OracleDiamondMap,
    OracleFlowMap,
    PosteriorDiamondMap,
    QuadraticReward,
    RadialReward,
    ResampleMode,
    Reward,
    ScheduleKind,
    Scheduler,
    SensitivityMode,
    ZeroReward,
    best_of_n,
    ddpm_reference_sample,
    denoiser_value,
    diamond_ddpm_step,
    ess,
    guide_posterior,
    guide_weighted,
    ks_test_1d,
    load_checkpoint,
    naive_renoise_step,
    posterior_value,
    posterior_value_gradient,
    r_star_surface,
    rbf_mmd,
    renoise,
    run_experiment,
    save_checkpoint,
    search,
    sliced_w2,
    smc,
    sufficient_statistic,
    train_diamond_map,
    w1_1d,
    weighted_diamond_gradient,
    weighted_diamond_value,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
