"""Bounded-rational decision policies on finite spaces.

Core surfaces: simplex geometry (divergences, geodesics, Bregman balls),
Markov-kernel calculus (products, disintegration, coarse-graining, capacity),
Gibbs policies of the multiplier control problem, the self-consistent
rate-utility system, and the bounded-disutility model of rights restriction.
"""

from .simplex import (
    SUPPORT_TOL,
    BregmanBall,
    Distribution,
    TangentVector,
    bregman_ball_contains,
    e_geodesic,
    entropy,
    kl_divergence,
    m_geodesic,
)
from .kernel import (
    CoarseGraining,
    JointDistribution,
    NonConvergenceError,
    StochasticKernel,
    UtilityMatrix,
    channel_capacity,
    coarse_grain_distribution,
    coarse_grain_joint,
    coarse_grain_kernel,
    coarse_grain_outputs,
    conditional_kernel,
    data_processing_check,
    disintegrate,
    mutual_information,
    mutual_information_gradient,
    push_forward,
    reciprocal_kernel,
    semidirect_product,
)
from .gibbs import (
    GibbsProblem,
    GibbsSolution,
    beta_of_rate,
    cumulants,
    gibbs_policy,
    max_rate,
    partition_function,
    rate_of_beta,
    solution_geodesic,
    solution_geodesic_tangent,
    state_dependent_gibbs,
)
from .rate_utility import (
    RateUtilityPoint,
    RateUtilityProblem,
    bregman_divergence_of_I,
    contraction_path,
    deterministic_argmax_kernel,
    expansion_path,
    max_rate_point,
    optimal_constant_prior,
    optimal_generic_prior,
    rate_utility_curve,
    slope_check,
    solve_at_rate,
    solve_self_consistent,
    tangency_residual,
    zero_rate_point,
)
from .deontic import (
    DisutilitySpec,
    NoSolution,
    PolicyMatrix,
    RestrictionScenario,
    ScanRecord,
    StateSpace,
    critical_beta_scan,
    derive_utility_matrix,
    disutility,
    face_divergence,
    face_divergence_bounds,
    feasibility_onset,
    legality_check,
    net_benefit,
    proportionality_optimize,
    refine_switch,
    select_restriction,
    vertex_switches,
)

__version__ = "0.1.0"
