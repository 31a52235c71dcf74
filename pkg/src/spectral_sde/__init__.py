"""Spectral estimation of volatility and drift for reflected diffusions
observed at random times."""

from .adaptive import LepskiConfig, LepskiResult, lepski_select, stochastic_threshold
from .basis import BasisEval, BasisSpec, eval_basis, evaluate_expansion, project_function
from .estimators import (
    CurveEstimate,
    DensityEstimate,
    EstimatorConfig,
    LaplaceEstimate,
    SpectralTriple,
    drift_from_triple,
    empirical_laplace,
    estimate_density,
    estimate_pipeline,
    estimate_v1,
    invert_laplace,
    volatility_from_triple,
)
from .harness import ExperimentConfig, RmiseReport, l2_distance, misspecified_baseline, run_monte_carlo
from .sde_sim import (
    DiffusionModel,
    ObservationSet,
    PathGrid,
    SamplingScheme,
    draw_gaps,
    fold_into_unit,
    invariant_density_exact,
    sample_observations,
    simulate_path,
)
from .spectral_core import (
    GsepSolution,
    PrincipalPair,
    gram_matrix,
    residual_bounds,
    select_principal_pair,
    solve_gsep,
    transition_matrix,
    weyl_bound,
)

__version__ = "0.1.0"
