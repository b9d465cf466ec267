"""Independent brute-force verifiers for the recovery solvers.

Nothing here shares code with the conic assembly paths: dual norms come
from the total-variation formula, polynomial-ball maxima from a dense-grid
LP relaxation plus certified feasible candidates, and worst-case errors
from random model-consistent functions.  Sup norms are certified on dense
Chebyshev audit grids with an explicit derivative-based safety factor (see
_sup_bounds).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import chebyshev
from .chebyshev import FunctionalSpec
from .model_type2 import TYPE1, TYPE2, ProblemSpec

logger = logging.getLogger("optrec.oracle")

#: a ball maximum below this is treated as exactly zero under kappa = inf
ZERO_BALL_TOL = 1e-9

#: grid-resolution slack carried by every certified sup-norm comparison
GRID_SLACK = 1e-9


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Splittable counter-based generator (Philox keyed by seed and stream)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def _sup_bounds(coeffs: np.ndarray, G: int) -> tuple[float, float]:
    """(grid max, certified upper bound) for the sup norm of a Chebyshev sum.

    With q(theta) = p(cos theta) a degree-d trigonometric polynomial, the
    maximum of |q| over [0, pi] is attained either at an endpoint (a grid
    node) or at an interior critical point theta*.  The nearest node of the
    uniform theta-grid with spacing h = pi/(G-1) is within h/2, and Taylor
    expansion with the Bernstein bound |q''| <= d^2 ||q|| gives

        ||q||_grid >= ||q|| * (1 - d^2 h^2 / 8),

    so dividing the grid max by that factor certifies an upper bound.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    d = coeffs.size - 1
    G = max(G, d + 2, 2)
    grid = chebyshev.extrema_grid(G)
    vals = chebyshev.cheb_eval(coeffs, grid)
    grid_max = float(np.max(np.abs(vals)))
    h = math.pi / (G - 1)
    shrink = 1.0 - d * d * h * h / 8.0
    if shrink <= 0:
        raise ValueError("audit grid too coarse for this degree")
    return grid_max, grid_max / shrink


def _audit_grid_size(degree: int) -> int:
    return 10 * max(degree, 0) + 64


def dual_norm(a, quantity: FunctionalSpec, points) -> float:
    """Total variation of rho - sum a_i delta_{x_i}: mutually singular parts add.

    Equals 1 + sum |a_i| for both supported quantities: a point evaluation
    at x0 outside the observation points contributes a separate atom, and
    the normalized integral is diffuse, hence singular to every atom.
    """
    a = np.asarray(a, dtype=float)
    points = np.asarray(points, dtype=float)
    if np.unique(points).size != points.size:
        raise ValueError("observation points must be pairwise distinct")
    if quantity.kind == FunctionalSpec.POINT:
        if points.size and np.min(np.abs(points - quantity.x0)) == 0.0:
            raise ValueError("x0 must not coincide with an observation point")
    elif quantity.kind != FunctionalSpec.INTEGRAL:
        raise ValueError("quantity must be point evaluation or normalized integral")
    return 1.0 + float(np.sum(np.abs(a)))


@dataclass(frozen=True)
class MaxBallBounds:
    """Bracket on max over the unit ball of P_n of |Q(v) - sum a_i v(x_i)|."""

    lower: float
    upper: float
    grid_size: int
    n_samples: int

    @property
    def width(self) -> float:
        return self.upper - self.lower


def max_over_ball(
    a,
    spec: ProblemSpec,
    grid_size: int = 1025,
    n_samples: int = 200,
    seed: int = 0,
) -> MaxBallBounds:
    """Bracket the maximum of the residual functional over the unit ball.

    Upper bound: the sup-norm constraint is relaxed to the grid (a larger
    feasible set), and the grid LP maximum is an upper bound.  Lower bound:
    every candidate coefficient vector is divided by a certified upper
    bound on its sup norm, making it feasible, so its value is a lower
    bound.  Candidates are the LP maximizer plus seeded random draws.
    """
    a = np.asarray(a, dtype=float)
    n = spec.n
    g = spec.quantity_moments(n) - spec.observation_matrix(n) @ a

    G = max(grid_size, n + 2)
    grid = chebyshev.extrema_grid(G)
    V = chebyshev.cheb_values_many(grid, n)
    # max g.c s.t. |V c| <= 1; the ball is symmetric so max |phi| = max phi.
    res = linprog(
        -g,
        A_ub=np.vstack([V, -V]),
        b_ub=np.ones(2 * G),
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"ball-maximum LP failed with status {res.status}")
    upper = float(-res.fun)

    eval_G = max(4 * G - 3, _audit_grid_size(n - 1))
    candidates = [np.asarray(res.x, dtype=float)]
    rng = make_rng(seed, stream=1)
    for _ in range(n_samples):
        candidates.append(rng.standard_normal(n))
    lower = 0.0
    for c in candidates:
        _, sup_safe = _sup_bounds(c, eval_G)
        if sup_safe < 1e-300:
            continue
        lower = max(lower, abs(float(g @ c)) / sup_safe)
    upper = max(upper, lower)
    return MaxBallBounds(lower=lower, upper=upper, grid_size=G, n_samples=n_samples)


@dataclass(frozen=True)
class WorstCaseBounds:
    """Bracket on the worst-case error of a linear map over the type-II model."""

    lower: float
    upper: float
    dual_norm_term: float
    ball: MaxBallBounds
    noise_term: float


def worst_case_type2(a, spec: ProblemSpec, **ball_kwargs) -> WorstCaseBounds:
    """epsilon * ||Q_a|| + kappa * (ball bracket) + eta * ||a||_p'.

    With kappa = inf the ball term must vanish for the error to be finite;
    a certified-near-zero bracket (upper <= ZERO_BALL_TOL) is counted as
    zero, anything larger as infinite.
    """
    if spec.model != TYPE2:
        raise ValueError("worst_case_type2 requires a type2 spec")
    a = np.asarray(a, dtype=float)
    dual = dual_norm(a, spec.quantity, spec.points)
    ball = max_over_ball(a, spec, **ball_kwargs)
    eta_term = spec.noise.eta * spec.noise.dual_norm_of(a) if spec.noise else 0.0
    base = spec.epsilon * dual + eta_term
    if math.isinf(spec.kappa):
        if ball.upper <= ZERO_BALL_TOL:
            lo = hi = 0.0
        else:
            logger.warning(
                "kappa = inf but ball maximum is not certified zero (%.2e)", ball.upper
            )
            lo = 0.0 if ball.lower <= ZERO_BALL_TOL else math.inf
            hi = math.inf
    else:
        lo, hi = spec.kappa * ball.lower, spec.kappa * ball.upper
    return WorstCaseBounds(
        lower=base + lo, upper=base + hi,
        dual_norm_term=dual, ball=ball, noise_term=eta_term,
    )


@dataclass(frozen=True)
class SampledFunction:
    """f = v + h with v in P_n, plus audit-grid sup-norm certificates.

    sup bounds are pairs (grid max, certified upper); membership in the
    model sets is certified on the audit grid with GRID_SLACK allowance.
    """

    v_coeffs: np.ndarray
    h_coeffs: np.ndarray
    model: str
    seed: int | None
    v_sup: tuple[float, float]
    h_sup: tuple[float, float]
    f_sup: tuple[float, float]
    audit_grid_size: int

    @classmethod
    def from_coefficients(cls, v_coeffs, h_coeffs, model: str, seed=None) -> "SampledFunction":
        v = np.asarray(v_coeffs, dtype=float)
        h = np.asarray(h_coeffs, dtype=float)
        f = _pad_add(v, h)
        G = _audit_grid_size(f.size - 1)
        return cls(
            v_coeffs=v, h_coeffs=h, model=model, seed=seed,
            v_sup=_sup_bounds(v, G), h_sup=_sup_bounds(h, G),
            f_sup=_sup_bounds(f, G), audit_grid_size=G,
        )

    @property
    def f_coeffs(self) -> np.ndarray:
        return _pad_add(self.v_coeffs, self.h_coeffs)

    def values(self, xs) -> np.ndarray:
        return chebyshev.cheb_eval(self.f_coeffs, xs)

    def value(self, x: float) -> float:
        return float(self.values([x])[0])


def _pad_add(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(max(u.size, v.size))
    out[: u.size] += u
    out[: v.size] += v
    return out


def _scale_to(coeffs: np.ndarray, bound: float, G: int, rng: np.random.Generator) -> np.ndarray:
    """Rescale so the certified sup-norm bound sits at 0.998 * bound.

    Keeps the true sup norm strictly inside the model bound while the grid
    norm stays within about a percent of it.
    """
    grid_max, sup_safe = _sup_bounds(coeffs, G)
    while grid_max < 1e-12:
        coeffs = rng.standard_normal(coeffs.size)
        grid_max, sup_safe = _sup_bounds(coeffs, G)
    return coeffs * (0.998 * bound / sup_safe)


def sample_type2(spec: ProblemSpec, seed: int, h_degree: int | None = None) -> SampledFunction:
    """Random member of the second-type model: ||v|| ~ kappa, ||h|| ~ epsilon."""
    n = spec.n
    h_size = (h_degree + 1) if h_degree is not None else 4 * n
    rng = make_rng(seed, stream=2)
    G = _audit_grid_size(max(n, h_size) - 1)
    kappa = spec.kappa if not math.isinf(spec.kappa) else 1.0
    v = _scale_to(rng.standard_normal(n), kappa, G, rng)
    h = _scale_to(rng.standard_normal(h_size), spec.epsilon, G, rng)
    return SampledFunction.from_coefficients(v, h, model=TYPE2, seed=seed)


def sample_type1(spec: ProblemSpec, seed: int, h_degree: int | None = None) -> SampledFunction:
    """Random member of the first-type model: ||h|| <= epsilon, ||v + h|| ~ kappa."""
    if math.isinf(spec.kappa):
        raise ValueError("type1 sampling needs finite kappa")
    n = spec.n
    h_size = (h_degree + 1) if h_degree is not None else 4 * n
    rng = make_rng(seed, stream=3)
    G = _audit_grid_size(max(n, h_size) - 1)
    h = _scale_to(rng.standard_normal(h_size), min(spec.epsilon, spec.kappa / 2), G, rng)
    v_raw = rng.standard_normal(n)
    grid = chebyshev.extrema_grid(G)
    v_vals = chebyshev.cheb_eval(v_raw, grid)
    h_vals = chebyshev.cheb_eval(h, grid)
    d = max(n, h_size) - 1
    shrink = 1.0 - d * d * (math.pi / (G - 1)) ** 2 / 8.0
    target = 0.998 * spec.kappa

    def safe_sup(t: float) -> float:
        return float(np.max(np.abs(t * v_vals + h_vals))) / shrink

    t_hi = 1.0
    while safe_sup(t_hi) <= target:
        t_hi *= 2.0
        if t_hi > 1e12:
            break
    t_lo = 0.0
    for _ in range(80):
        mid = 0.5 * (t_lo + t_hi)
        if safe_sup(mid) <= target:
            t_lo = mid
        else:
            t_hi = mid
    return SampledFunction.from_coefficients(t_lo * v_raw, h, model=TYPE1, seed=seed)


def check_membership(sample: SampledFunction, spec: ProblemSpec) -> bool:
    """Audit-grid membership of the sample in its model set."""
    kappa = spec.kappa if not math.isinf(spec.kappa) else math.inf
    if sample.model == TYPE2:
        return (
            sample.h_sup[0] <= spec.epsilon + GRID_SLACK
            and sample.v_sup[0] <= kappa + GRID_SLACK
        )
    return (
        sample.h_sup[0] <= spec.epsilon + GRID_SLACK
        and sample.f_sup[0] <= kappa + GRID_SLACK
    )


def _quantity_value(f_coeffs: np.ndarray, quantity: FunctionalSpec) -> float:
    if quantity.kind == FunctionalSpec.POINT:
        return float(chebyshev.cheb_eval(f_coeffs, [quantity.x0])[0])
    # High-order Gauss-Legendre: exact for polynomials at this node count.
    nodes, weights = np.polynomial.legendre.leggauss(f_coeffs.size // 2 + 8)
    return 0.5 * float(weights @ chebyshev.cheb_eval(f_coeffs, nodes))


def empirical_error(a, samples, spec: ProblemSpec) -> float:
    """max over samples of |Q(f) - sum a_i f(x_i)|; lower-bounds the true error."""
    a = np.asarray(a, dtype=float)
    worst = 0.0
    for sample in samples:
        f = sample.f_coeffs
        qf = _quantity_value(f, spec.quantity)
        rf = float(a @ chebyshev.cheb_eval(f, spec.points))
        worst = max(worst, abs(qf - rf))
    return worst
