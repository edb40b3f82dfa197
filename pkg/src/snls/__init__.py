"""Split-step spectral solver and rare-event toolkit for a damped nonlinear
Schrodinger equation with mixed rotational (Stratonovich) and Lipschitz (Ito)
multiplicative noise: skeleton and stochastic controlled dynamics, action
minimization for rare-event rates, and Monte Carlo small-noise sweeps."""

__version__ = "0.1.0"

from .grid import ComplexField, Grid, SpectralField, from_spectrum, inner, norm_l2, norm_lr, to_spectrum
from .noise import NoiseIncrement, SeedSpec, brownian_bridge_refine, increments, path_increments
from .operators import (
    AdmissiblePair,
    ModelParams,
    NoiseModel,
    admissible_p,
    apply_A,
    apply_B,
    apply_B_full,
    apply_G,
    apply_G_full,
    nonlinearity,
    stratonovich_correction,
    yosida,
)
from .skeleton import (
    Control,
    choose_contraction_horizon,
    conservation_special_case,
    contraction_ratios,
    picard_iterate,
    picard_map,
    solve_skeleton,
    solve_skeleton_yosida,
)
from .stepping import BlowUpError, TruncationSpec
from .stochastic import StopReport, mass_moment_balance, run_paths, solve_sde, solve_truncated, step_sde
from .trajectory import Trajectory, mixed_norm, mixed_norm_of_difference
from .ldp import (
    EventSpec,
    RateOptions,
    RateResult,
    control_cost,
    grid_search_action,
    in_D_N,
    ldp_bounds_probe,
    minimize_action,
)
from .mc import SweepResult, SweepRow, epsilon_sweep, estimate_probability, merge_rows, wilson_interval
