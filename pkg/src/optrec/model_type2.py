"""Exact optimal recovery over the second bounded approximability model.

The model set consists of f = v + h with v a polynomial of degree < n,
||v|| <= kappa and ||h|| <= epsilon (sup norms on [-1, 1]).  For point
evaluations at distinct points and a quantity of interest that is another
point evaluation or the normalized integral, the optimal weights solve a
semidefinite program with two Toeplitz blocks; with kappa infinite the
problem collapses to a moment-matching linear program.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import chebyshev, conic
from .chebyshev import FunctionalSpec

logger = logging.getLogger("optrec.model_type2")

TYPE1 = "type1"
TYPE2 = "type2"


class SpecError(ValueError):
    """Invalid recovery-problem specification."""


class SolverStatusError(RuntimeError):
    """A conic solve ended in a non-optimal status."""

    def __init__(self, status: str, message: str):
        super().__init__(f"{status}: {message}")
        self.status = status


@dataclass(frozen=True)
class Noise:
    """Bounded observation error ||e||_p <= eta."""

    p: float
    eta: float

    def __post_init__(self):
        if self.p not in (1, 2, math.inf):
            raise SpecError(f"noise p must be 1, 2, or inf, got {self.p}")
        if self.eta < 0:
            raise SpecError("noise eta must be >= 0")

    @property
    def conjugate(self) -> float:
        if self.p == 1:
            return math.inf
        if self.p == math.inf:
            return 1
        return 2

    def dual_norm_of(self, a: np.ndarray) -> float:
        q = self.conjugate
        if q == 1:
            return float(np.sum(np.abs(a)))
        if q == 2:
            return float(np.linalg.norm(a))
        return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True)
class ProblemSpec:
    """A full recovery-problem instance.

    n is the dimension of the polynomial subspace (degree < n); kappa may be
    math.inf for the unbounded-approximant reduction (type2 only).
    """

    model: str
    n: int
    epsilon: float
    kappa: float
    points: np.ndarray
    quantity: FunctionalSpec
    noise: Noise | None = None

    def __post_init__(self):
        if self.model not in (TYPE1, TYPE2):
            raise SpecError(f"model must be 'type1' or 'type2', got {self.model!r}")
        if self.n < 1:
            raise SpecError("n must be >= 1")
        if self.epsilon <= 0:
            raise SpecError("epsilon must be positive")
        if not (self.kappa > 0):
            raise SpecError("kappa must be positive (math.inf allowed)")
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 1:
            raise SpecError("points must be a nonempty vector")
        if np.max(np.abs(pts)) > 1.0:
            raise SpecError("points must lie in [-1, 1]")
        if np.unique(pts).size != pts.size:
            raise SpecError("points must be pairwise distinct")
        if self.quantity.kind == FunctionalSpec.POINT:
            if np.min(np.abs(pts - self.quantity.x0)) == 0.0:
                raise SpecError("x0 must not coincide with an observation point")
        elif self.quantity.kind != FunctionalSpec.INTEGRAL:
            raise SpecError("quantity must be point evaluation or normalized integral")

    @property
    def m(self) -> int:
        return self.points.size

    def observation_matrix(self, rows: int) -> np.ndarray:
        """C[j, i] = T_j(x_i), j = 0..rows-1."""
        return chebyshev.cheb_values_many(self.points, rows).T

    def quantity_moments(self, rows: int) -> np.ndarray:
        return chebyshev.moments(self.quantity, rows).entries

    @property
    def eta(self) -> float:
        return self.noise.eta if self.noise is not None else 0.0


@dataclass(frozen=True)
class RecoveryWeights:
    """Weights of a linear recovery map, with its certified worst-case error."""

    a: np.ndarray
    certified_value: float
    model: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.certified_value < 0:
            raise ValueError("certified value must be nonnegative")

    def apply(self, y) -> float:
        return float(np.dot(self.a, np.asarray(y, dtype=float)))


def _add_noise_term(builder: conic.ProblemBuilder, a_idx, noise: Noise | None,
                    abs_slacks=None) -> None:
    """Append eta * ||a||_p' to the objective (p' conjugate to p)."""
    if noise is None or noise.eta == 0.0:
        return
    q = noise.conjugate
    if q == 1:
        s = abs_slacks if abs_slacks is not None else builder.add_abs_slacks(a_idx)
        builder.add_objective(s, np.full(len(s), noise.eta))
    elif q == math.inf:
        w = builder.add_max_abs_bound(a_idx)
        builder.add_objective([w], [noise.eta])
    else:
        t = builder.add_euclidean_bound(a_idx)
        builder.add_objective([t], [noise.eta])


def _toeplitz_psd_block(builder: conic.ProblemBuilder, order: int, terms, rhs: np.ndarray):
    """Tie a packed PSD block to Toep(w) where w_d = sum(coef * var) + rhs_d.

    terms: list of (indices, coefs_matrix) contributions; coefs_matrix has a
    row per diagonal offset d.  Entry (i, j) of the matrix equals w_{j-i}.
    """
    p = builder.add_psd(order)
    for j in range(order):
        for i in range(j + 1):
            d = j - i
            scale = 1.0 if d == 0 else conic.ROOT2
            cols = [p[conic.svec_index(i, j)]]
            coefs = [1.0]
            for idx, mat in terms:
                cols.extend(idx)
                coefs.extend(-scale * mat[d])
            builder.add_equality(cols, coefs, scale * rhs[d])
    return p


def assemble_type2(spec: ProblemSpec) -> conic.ConicProblem:
    """The Toeplitz semidefinite program for the second-type model.

    Its optimal value is the worst-case error of the optimal map, i.e.
    epsilon * (1 + sum |a_i|) + kappa * max_{B_V} |Q(v) - sum a_i v(x_i)|
    (plus eta * ||a||_p' under observation noise); the constant epsilon
    rides along as an objective offset.
    """
    if spec.model != TYPE2:
        raise SpecError("assemble_type2 requires a type2 spec")
    if math.isinf(spec.kappa):
        raise SpecError("kappa = inf is handled by solve_type2_kappa_inf")
    n, m = spec.n, spec.m
    C = spec.observation_matrix(n)  # n x m
    b = spec.quantity_moments(n)

    builder = conic.ProblemBuilder()
    a = builder.add_free(m)
    u = builder.add_free(n)
    eye = np.eye(n)
    # Toep(u + C a - b) >= 0 and Toep(u - C a + b) >= 0
    _toeplitz_psd_block(builder, n, [(a, C), (u, eye)], -b)
    _toeplitz_psd_block(builder, n, [(a, -C), (u, eye)], b)
    s = builder.add_abs_slacks(a)
    builder.add_objective(s, np.full(m, spec.epsilon))
    builder.add_objective([u[0]], [spec.kappa])
    builder.add_offset(spec.epsilon)
    _add_noise_term(builder, a, spec.noise, abs_slacks=s)
    return builder.build()


def _raise_unless_optimal(sol: conic.ConicSolution, what: str) -> None:
    if not sol.is_optimal:
        raise SolverStatusError(sol.status, f"{what} did not solve to optimality")


def solve_type2(spec: ProblemSpec, tol: float = 1e-8) -> RecoveryWeights:
    """Optimal recovery weights over the second-type model set."""
    if spec.model != TYPE2:
        raise SpecError("solve_type2 requires a type2 spec")
    if math.isinf(spec.kappa):
        return solve_type2_kappa_inf(spec, tol)
    problem = assemble_type2(spec)
    sol = conic.solve(problem, tol)
    _raise_unless_optimal(sol, "type2 SDP")
    a = sol.x[: spec.m].copy()
    return RecoveryWeights(
        a=a,
        certified_value=max(sol.objective, 0.0),
        model=TYPE2,
        diagnostics=_diag(sol, tol),
    )


def solve_type2_kappa_inf(spec: ProblemSpec, tol: float = 1e-8) -> RecoveryWeights:
    """The kappa = inf reduction: minimize epsilon (1 + sum |a_i|) s.t. Ca = b.

    The moment-matching constraint forces the residual functional to vanish
    on the polynomial subspace; with n > m it is generically infeasible,
    which is exactly the overparametrization failure the bounded models fix.
    """
    if spec.model != TYPE2:
        raise SpecError("solve_type2_kappa_inf requires a type2 spec")
    if not math.isinf(spec.kappa):
        raise SpecError("kappa is finite; use solve_type2")
    n, m = spec.n, spec.m
    if n > m:
        logger.warning(
            "kappa = inf with n = %d > m = %d: moment matching is "
            "generically infeasible", n, m,
        )
    C = spec.observation_matrix(n)
    b = spec.quantity_moments(n)

    builder = conic.ProblemBuilder()
    a = builder.add_free(m)
    for j in range(n):
        builder.add_equality(a, C[j], b[j])
    s = builder.add_abs_slacks(a)
    builder.add_objective(s, np.full(m, spec.epsilon))
    builder.add_offset(spec.epsilon)
    _add_noise_term(builder, a, spec.noise, abs_slacks=s)
    problem = builder.build()

    sol = conic.solve(problem, tol) if not problem.is_linear else conic.lp_solve(problem, tol)
    _raise_unless_optimal(sol, "kappa=inf LP")
    return RecoveryWeights(
        a=sol.x[:m].copy(),
        certified_value=max(sol.objective, 0.0),
        model=TYPE2,
        diagnostics=_diag(sol, tol),
    )


def _diag(sol: conic.ConicSolution, tol: float) -> dict:
    return {
        "status": sol.status,
        "solver": sol.solver,
        "tol": tol,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "duality_gap": sol.duality_gap,
        "iterations": sol.iterations,
        "dropped_rows": sol.dropped_rows,
    }
