"""Markov kernels: HMC parameter updates, annealed bridges and reversible-jump steps."""

from .annealing import (
    COMBINERS,
    AnnealConfig,
    PathBatch,
    ais_paths,
    ais_switch,
    annealed_grad,
    annealed_log_density,
    combine_log_ratio,
    combine_ratio,
    mala_annealed_kernel,
)
from .hmc import HmcTuning, hmc_autotune, hmc_propose, hmc_update, leapfrog
from .kernels import (
    SAMPLERS,
    ChainState,
    DimensionError,
    IterationStreams,
    SamplerSpec,
    initial_state,
    rj_ais_step,
    rj_improved_g_step,
    rj_informed_step,
    rj_multi_step,
    rj_uninformed_step,
    run_chain,
    tune_ell,
)

__all__ = [
    "COMBINERS", "SAMPLERS", "AnnealConfig", "ChainState", "DimensionError", "HmcTuning",
    "IterationStreams", "PathBatch", "SamplerSpec", "ais_paths", "ais_switch", "annealed_grad",
    "annealed_log_density", "combine_log_ratio", "combine_ratio", "hmc_autotune", "hmc_propose",
    "hmc_update", "initial_state", "leapfrog", "mala_annealed_kernel", "rj_ais_step",
    "rj_improved_g_step", "rj_informed_step", "rj_multi_step", "rj_uninformed_step",
    "run_chain", "tune_ell",
]
