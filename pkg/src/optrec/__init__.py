"""Optimal recovery of linear functionals on C[-1,1] under bounded
approximability models: exact Toeplitz SDPs for the second type, truncated
moment SDP / grid LP sandwiches for the first type, with independent
brute-force oracles."""

from .chebyshev import (
    ChebMoments,
    DomainError,
    FunctionalSpec,
    cheb_values,
    grid,
    moment_matrix,
    moments,
    toeplitz,
)
from .conic import ConicProblem, ConicSolution, ProblemBuilder, lp_solve, solve
from .model_type1 import (
    SandwichResult,
    assemble_grid_lp,
    assemble_type1_truncated,
    convergence_study,
    sandwich,
    solve_type1_lower,
    solve_type1_upper,
)
from .model_type2 import (
    Noise,
    ProblemSpec,
    RecoveryWeights,
    SolverStatusError,
    SpecError,
    assemble_type2,
    solve_type2,
    solve_type2_kappa_inf,
)
from .oracle import (
    SampledFunction,
    dual_norm,
    empirical_error,
    max_over_ball,
    sample_type1,
    sample_type2,
    worst_case_type2,
)

__version__ = "0.1.0"
