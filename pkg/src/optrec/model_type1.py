"""Sandwich solver for the first bounded approximability model.

The intrinsic error is the value of a measure-optimization program; it is
bracketed from below by truncating its moment formulation to level N (a
semidefinite program with four Toeplitz blocks) and from above by
restricting the measures to atoms on a grid (a linear program).  The LP
minimizer doubles as a near-optimal recovery map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import chebyshev, conic
from .chebyshev import FunctionalSpec
from .model_type2 import (
    TYPE1,
    ProblemSpec,
    SolverStatusError,
    SpecError,
    _add_noise_term,
    _diag,
    _raise_unless_optimal,
    _toeplitz_psd_block,
)

logger = logging.getLogger("optrec.model_type1")


@dataclass(frozen=True)
class SandwichResult:
    """Lower/upper bounds on the intrinsic error with the certifying weights.

    beta_t, gap and a_t are None when the quantity of interest is the
    normalized integral (the atomic-measure ansatz cannot match a diffuse
    measure), flagged by upper_bound_available = False.
    """

    alpha_N: float
    beta_t: float | None
    a_N: np.ndarray
    a_t: np.ndarray | None
    N: int
    K: int
    grid: np.ndarray
    upper_bound_available: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def gap(self) -> float | None:
        if self.beta_t is None:
            return None
        return self.beta_t - self.alpha_N


def assemble_type1_truncated(spec: ProblemSpec, N: int) -> conic.ConicProblem:
    """Level-N truncation of the moment program for the first-type model.

    Variables are the weights a and the truncated moment vectors w+, w-,
    z+, z- of the Jordan parts of the two dual measures; each moment vector
    carries a Toeplitz PSD constraint.
    """
    if spec.model != TYPE1:
        raise SpecError("assemble_type1_truncated requires a type1 spec")
    if math.isinf(spec.kappa):
        raise SpecError("type1 needs finite kappa (use a large value instead)")
    n, m = spec.n, spec.m
    if N < max(n, m):
        raise SpecError(f"truncation level N = {N} must be >= max(n, m) = {max(n, m)}")
    C = spec.observation_matrix(N)  # N x m
    rho = spec.quantity_moments(N)

    builder = conic.ProblemBuilder()
    a = builder.add_free(m)
    wp = builder.add_free(N)
    wm = builder.add_free(N)
    zp = builder.add_free(N)
    zm = builder.add_free(N)
    # Moment matching: w+ - w- + z+ - z- + C a = M_N(rho)
    for j in range(N):
        cols = [wp[j], wm[j], zp[j], zm[j], *a]
        coefs = [1.0, -1.0, 1.0, -1.0, *C[j]]
        builder.add_equality(cols, coefs, rho[j])
    # The first dual functional vanishes on the polynomial subspace.
    for j in range(n):
        builder.add_equality([wp[j], wm[j]], [1.0, -1.0], 0.0)
    eye = np.eye(N)
    for vec in (wp, wm, zp, zm):
        _toeplitz_psd_block(builder, N, [(vec, eye)], np.zeros(N))
    builder.add_objective([wp[0], wm[0]], [spec.epsilon, spec.epsilon])
    builder.add_objective([zp[0], zm[0]], [spec.kappa, spec.kappa])
    _add_noise_term(builder, a, spec.noise)
    return builder.build()


def solve_type1_lower(spec: ProblemSpec, N: int, tol: float = 1e-8):
    """alpha_N and its weights: a certified lower bound on the intrinsic error."""
    mm = chebyshev.moment_matrix(spec.points)
    if mm.near_singular:
        logger.warning(
            "moment matrix condition %.2e: weight convergence unreliable "
            "(the lower bound itself remains valid)", mm.cond,
        )
    problem = assemble_type1_truncated(spec, N)
    sol = conic.solve(problem, tol)
    _raise_unless_optimal(sol, f"type1 truncated SDP (N={N})")
    alpha = max(sol.objective, 0.0)
    a_N = sol.x[: spec.m].copy()
    return alpha, a_N, _diag(sol, tol)


def assemble_grid_lp(spec: ProblemSpec, grid) -> conic.ConicProblem:
    """Grid-restricted upper-bound LP for a point-evaluation quantity.

    Measures are restricted to atoms at x0, the observation points and the
    grid; the objective is the weighted total variation of the two parts.
    """
    if spec.model != TYPE1:
        raise SpecError("assemble_grid_lp requires a type1 spec")
    if spec.quantity.kind != FunctionalSpec.POINT:
        raise SpecError(
            "grid LP upper bound needs a point-evaluation quantity "
            "(atoms cannot match a diffuse measure)"
        )
    if math.isinf(spec.kappa):
        raise SpecError("type1 needs finite kappa (use a large value instead)")
    grid = np.asarray(grid, dtype=float)
    n, m = spec.n, spec.m
    support = np.concatenate([[spec.quantity.x0], spec.points, grid])
    if grid.size:
        excluded = np.concatenate([[spec.quantity.x0], spec.points])
        if np.min(np.abs(grid[:, None] - excluded[None, :])) < 1e-13:
            raise SpecError("grid must avoid x0 and the observation points")
    H = support.size
    E = chebyshev.cheb_values_many(support, n).T  # n x H, columns [b | C | D]

    builder = conic.ProblemBuilder()
    a = builder.add_free(m)
    u = builder.add_free(H)
    v = builder.add_free(H)
    # u + v = [1; -a; 0]
    for h in range(H):
        cols, coefs = [u[h], v[h]], [1.0, 1.0]
        if 1 <= h <= m:
            cols.append(a[h - 1])
            coefs.append(1.0)
        builder.add_equality(cols, coefs, 1.0 if h == 0 else 0.0)
    # The first measure vanishes on the polynomial subspace: [b | C | D] u = 0.
    for j in range(n):
        builder.add_equality(u, E[j], 0.0)
    r = builder.add_abs_slacks(u)
    s = builder.add_abs_slacks(v)
    builder.add_objective(r, np.full(H, spec.epsilon))
    builder.add_objective(s, np.full(H, spec.kappa))
    return builder.build()


def solve_type1_upper(spec: ProblemSpec, grid, tol: float = 1e-8):
    """beta_t and the near-optimal weights from the grid LP."""
    problem = assemble_grid_lp(spec, grid)
    sol = conic.lp_solve(problem, tol)
    _raise_unless_optimal(sol, f"grid LP (K={np.asarray(grid).size})")
    beta = max(sol.objective, 0.0)
    a_t = sol.x[: spec.m].copy()
    return beta, a_t, _diag(sol, tol)


def _exclusions(spec: ProblemSpec) -> np.ndarray:
    if spec.quantity.kind == FunctionalSpec.POINT:
        return np.concatenate([[spec.quantity.x0], spec.points])
    return spec.points.copy()


def make_grid(spec: ProblemSpec, K: int, tol: float = 1e-8) -> np.ndarray:
    """Chebyshev grid of size K avoiding x0 and the observation points."""
    if K == 0:
        return np.zeros(0)
    return chebyshev.grid(K, exclusions=_exclusions(spec), tol=tol)


def nested_grids(spec: ProblemSpec, K_list, tol: float = 1e-8) -> list[np.ndarray]:
    """Cumulative unions of Chebyshev grids, so each level contains the last.

    Supersets are what make the upper bound provably nonincreasing; raw
    Chebyshev grids of different sizes share no points.
    """
    grids, acc = [], np.zeros(0)
    for K in K_list:
        acc = np.union1d(acc, make_grid(spec, int(K), tol)) if K else acc
        grids.append(acc.copy())
    return grids


def sandwich(spec: ProblemSpec, N: int, K: int, tol: float = 1e-8) -> SandwichResult:
    """Lower/upper sandwich alpha_N <= intrinsic error <= beta_t."""
    grid = make_grid(spec, K)
    alpha, a_N, diag_lo = solve_type1_lower(spec, N, tol)
    diagnostics = {"lower": diag_lo}
    if spec.quantity.kind == FunctionalSpec.POINT:
        beta, a_t, diag_up = solve_type1_upper(spec, grid, tol)
        diagnostics["upper"] = diag_up
        if alpha > beta + 2 * tol:
            raise SolverStatusError(
                conic.NUMERICAL_FAILURE,
                f"sandwich ordering violated: alpha = {alpha!r} > beta = {beta!r}",
            )
        return SandwichResult(
            alpha_N=alpha, beta_t=beta, a_N=a_N, a_t=a_t, N=N, K=K,
            grid=grid, upper_bound_available=True, diagnostics=diagnostics,
        )
    logger.info("normalized-integral quantity: upper bound unavailable")
    return SandwichResult(
        alpha_N=alpha, beta_t=None, a_N=a_N, a_t=None, N=N, K=K,
        grid=grid, upper_bound_available=False, diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    K: int
    alpha: float
    beta: float | None
    gap: float | None
    weight_drift: float | None


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple[ConvergenceRow, ...]
    monotonicity_violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.monotonicity_violations


#: solver slack allowed in the monotonicity checks
MONOTONICITY_SLACK = 1e-8


def convergence_study(spec: ProblemSpec, N_list, K_list, tol: float = 1e-8) -> ConvergenceTable:
    """Sandwich the instance along ascending truncation levels and nested grids.

    The alpha column must be nondecreasing and the beta column nonincreasing
    (up to solver slack); violations are collected as solver-accuracy
    diagnostics rather than silently accepted.
    """
    N_list = [int(N) for N in N_list]
    K_list = [int(K) for K in K_list]
    if not N_list or not K_list:
        raise SpecError("N_list and K_list must be nonempty")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise SpecError("N_list must be strictly ascending")
    if any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise SpecError("K_list must be strictly ascending")

    levels = max(len(N_list), len(K_list))
    Ns = N_list + [N_list[-1]] * (levels - len(N_list))
    Ks = K_list + [K_list[-1]] * (levels - len(K_list))
    upper_ok = spec.quantity.kind == FunctionalSpec.POINT
    grids = nested_grids(spec, Ks) if upper_ok else [None] * levels

    rows: list[ConvergenceRow] = []
    violations: list[str] = []
    alpha_cache: dict[int, tuple[float, np.ndarray]] = {}
    beta_cache: dict[int, float] = {}
    prev_a: np.ndarray | None = None
    for lvl in range(levels):
        N, K = Ns[lvl], Ks[lvl]
        if N not in alpha_cache:
            alpha, a_N, _ = solve_type1_lower(spec, N, tol)
            alpha_cache[N] = (alpha, a_N)
        alpha, a_N = alpha_cache[N]
        beta = None
        if upper_ok:
            if lvl not in beta_cache:
                beta_cache[lvl], _, _ = solve_type1_upper(spec, grids[lvl], tol)
            beta = beta_cache[lvl]
        drift = None
        if prev_a is not None and prev_a.size == a_N.size:
            drift = float(np.max(np.abs(a_N - prev_a)))
        prev_a = a_N
        rows.append(ConvergenceRow(
            N=N, K=K, alpha=alpha, beta=beta,
            gap=None if beta is None else beta - alpha, weight_drift=drift,
        ))

    for i in range(1, len(rows)):
        if rows[i].alpha < rows[i - 1].alpha - MONOTONICITY_SLACK:
            violations.append(
                f"alpha decreased from {rows[i-1].alpha!r} (N={rows[i-1].N}) "
                f"to {rows[i].alpha!r} (N={rows[i].N})"
            )
        if (
            rows[i].beta is not None
            and rows[i - 1].beta is not None
            and rows[i].beta > rows[i - 1].beta + MONOTONICITY_SLACK
        ):
            violations.append(
                f"beta increased from {rows[i-1].beta!r} (K={rows[i-1].K}) "
                f"to {rows[i].beta!r} (K={rows[i].K})"
            )
    for msg in violations:
        logger.warning("monotonicity diagnostic: %s", msg)
    return ConvergenceTable(rows=tuple(rows), monotonicity_violations=tuple(violations))
