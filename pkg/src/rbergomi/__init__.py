"""Rough Bergomi call pricing under three integration engines.

Monte Carlo, randomized rank-1 lattice QMC and dimension-adaptive
sparse-grid quadrature, all driving the same conditionally smoothed payoff,
accelerated by Brownian bridge reordering and Richardson extrapolation.
"""

from .asgq import BudgetExhaustedError, adaptive_construct, asgq_price
from .estimators import (
    EstimateResult,
    balance_samples,
    mc_estimate,
    plain_mc_oracle,
    qmc_estimate,
)
from .experiments import (
    PARAMETER_SETS,
    ParameterSet,
    RunRecord,
    run_compare,
    run_price,
    run_reference,
    run_weak_error,
)
from .lattice import LatticeRule, construct_generating_vector, make_lattice_rule
from .mathcore import (
    NotPositiveDefiniteError,
    black_scholes_call,
    cholesky_factor,
    discrete_convolution,
    gauss_hermite_rule,
    inverse_normal_cdf,
)
from .paths import (
    ExactSmoothedIntegrand,
    GaussianInput,
    ModelParams,
    SmoothedIntegrand,
    colorize_hybrid_input,
    conditional_payoff,
    correlation_function_C,
    exact_covariance_matrix,
    hybrid_step_covariance,
    hybrid_weights,
    kernel_eval,
    simulate_fbm_exact,
    simulate_fbm_hybrid,
    variance_path,
)
from .transforms import (
    BridgeSchedule,
    RichardsonTableau,
    bridge_schedule,
    bridge_transform,
    richardson_combine,
)

__version__ = "0.1.0"
