"""Chebyshev-basis primitives on [-1, 1].

Everything downstream works in the basis T_0, T_1, ... of Chebyshev
polynomials of the first kind.  Moment vectors are stored 0-based: entry k
of a length-N vector holds the functional applied to T_k, k = 0..N-1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy import linalg as sla

logger = logging.getLogger("optrec.chebyshev")

#: |x| may exceed 1 by at most this much before cheb_values rejects it.
DOMAIN_TOL = 1e-12

#: moment_matrix flags near-singularity above this condition number.
COND_THRESHOLD = 1e12


class DomainError(ValueError):
    """Argument outside [-1, 1] beyond tolerance."""


@dataclass(frozen=True)
class ChebMoments:
    """Moments of a linear functional against T_0, ..., T_{N-1}.

    entries[k] is the functional applied to T_k.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("moment vector must be 1-d with at least one entry")
        object.__setattr__(self, "entries", arr)

    @property
    def length(self) -> int:
        return self.entries.size


@dataclass(frozen=True)
class FunctionalSpec:
    """A linear functional on C[-1,1]: point evaluation, the normalized
    integral (1/2)∫_{-1}^{1} f, or a finite atomic measure."""

    kind: str
    x0: float | None = None
    atoms: tuple[tuple[float, float], ...] = field(default=())

    POINT = "point_evaluation"
    INTEGRAL = "normalized_integral"
    ATOMIC = "atomic_measure"

    def __post_init__(self):
        if self.kind == self.POINT:
            if self.x0 is None or not -1.0 <= self.x0 <= 1.0:
                raise DomainError(f"point evaluation location {self.x0} not in [-1, 1]")
        elif self.kind == self.INTEGRAL:
            if self.x0 is not None:
                raise ValueError("normalized_integral takes no location")
        elif self.kind == self.ATOMIC:
            locs = [loc for loc, _ in self.atoms]
            if any(not -1.0 <= loc <= 1.0 for loc in locs):
                raise DomainError("atomic measure locations must lie in [-1, 1]")
            if len(set(locs)) != len(locs):
                raise ValueError("atomic measure locations must be pairwise distinct")
        else:
            raise ValueError(f"unknown functional kind {self.kind!r}")

    @classmethod
    def point(cls, x0: float) -> "FunctionalSpec":
        return cls(kind=cls.POINT, x0=float(x0))

    @classmethod
    def integral(cls) -> "FunctionalSpec":
        return cls(kind=cls.INTEGRAL)

    @classmethod
    def atomic(cls, atoms) -> "FunctionalSpec":
        return cls(kind=cls.ATOMIC, atoms=tuple((float(l), float(w)) for l, w in atoms))


def cheb_values(x: float, n: int) -> np.ndarray:
    """(T_0(x), ..., T_{n-1}(x)) by the three-term recurrence.

    Raises DomainError if |x| > 1 + 1e-12; x within tolerance is clamped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if abs(x) > 1.0 + DOMAIN_TOL:
        raise DomainError(f"x = {x} outside [-1, 1]")
    x = min(1.0, max(-1.0, float(x)))
    out = np.empty(n)
    out[0] = 1.0
    if n > 1:
        out[1] = x
    for j in range(2, n):
        out[j] = 2.0 * x * out[j - 1] - out[j - 2]
    return out


def cheb_values_many(xs, n: int) -> np.ndarray:
    """Vandermonde-style matrix V[k, j] = T_j(xs[k]), shape (len(xs), n)."""
    xs = np.asarray(xs, dtype=float)
    if n < 1:
        raise ValueError("n must be >= 1")
    if xs.size and np.max(np.abs(xs)) > 1.0 + DOMAIN_TOL:
        raise DomainError("grid point outside [-1, 1]")
    xs = np.clip(xs, -1.0, 1.0)
    V = np.empty((xs.size, n))
    V[:, 0] = 1.0
    if n > 1:
        V[:, 1] = xs
    for j in range(2, n):
        V[:, j] = 2.0 * xs * V[:, j - 1] - V[:, j - 2]
    return V


def cheb_eval(coeffs, xs) -> np.ndarray:
    """Evaluate sum_j coeffs[j] T_j at the points xs (Clenshaw recurrence)."""
    coeffs = np.asarray(coeffs, dtype=float)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    b1 = np.zeros_like(xs)
    b2 = np.zeros_like(xs)
    for c in coeffs[:0:-1]:
        b1, b2 = 2.0 * xs * b1 - b2 + c, b1
    return xs * b1 - b2 + (coeffs[0] if coeffs.size else 0.0)


def _integral_moment(j: int) -> float:
    # Adaptive quadrature on purpose: the closed form 1/(1-j^2) stays a test
    # oracle instead of leaking into the implementation.
    val, err = integrate.quad(
        lambda x, j=j: cheb_values(x, j + 1)[j],
        -1.0,
        1.0,
        epsabs=1e-13,
        epsrel=1e-13,
        limit=max(50, 4 * j + 50),
    )
    if err > 1e-9:
        logger.warning("quadrature for integral moment %d reported error %g", j, err)
    return 0.5 * val


def moments(f: FunctionalSpec, N: int) -> ChebMoments:
    """Moment vector of the functional f against T_0, ..., T_{N-1}."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if f.kind == FunctionalSpec.POINT:
        return ChebMoments(cheb_values(f.x0, N))
    if f.kind == FunctionalSpec.INTEGRAL:
        return ChebMoments(np.array([_integral_moment(j) for j in range(N)]))
    if f.kind == FunctionalSpec.ATOMIC:
        out = np.zeros(N)
        for loc, w in f.atoms:
            out += w * cheb_values(loc, N)
        return ChebMoments(out)
    raise ValueError(f"unknown functional kind {f.kind!r}")


def toeplitz(u) -> np.ndarray:
    """Symmetric Toeplitz matrix with first column u."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size < 1:
        raise ValueError("u must be a nonempty vector")
    return sla.toeplitz(u)


@dataclass(frozen=True)
class MomentMatrix:
    """M[j, i] = T_j(x_i) (square), with a condition-number estimate."""

    matrix: np.ndarray
    cond: float
    near_singular: bool


def moment_matrix(points, cond_threshold: float = COND_THRESHOLD) -> MomentMatrix:
    """Chebyshev-Vandermonde moment matrix of m distinct points.

    Near-singularity (condition estimate above the threshold) is a warning
    status, not a failure: invertibility is all the downstream weight
    recovery needs.
    """
    points = np.asarray(points, dtype=float)
    m = points.size
    if m < 1:
        raise ValueError("need at least one point")
    if np.unique(points).size != m:
        raise ValueError("points must be pairwise distinct")
    M = cheb_values_many(points, m).T
    cond = float(np.linalg.cond(M))
    near_singular = bool(not np.isfinite(cond) or cond > cond_threshold)
    if near_singular:
        logger.warning("moment matrix condition estimate %.3e above %.1e", cond, cond_threshold)
    return MomentMatrix(matrix=M, cond=cond, near_singular=near_singular)


def grid(K: int, exclusions=(), tol: float = 1e-8) -> np.ndarray:
    """K Chebyshev-distributed points cos(pi (2k-1) / (2K)), nudged off exclusions.

    A point within tol of an exclusion is moved by +tol (clamped to [-1, 1])
    until clear; every returned point ends at distance > tol/2 from each
    exclusion and the points are pairwise distinct.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    exclusions = np.asarray(list(exclusions), dtype=float)
    pts = np.cos(np.pi * (2.0 * np.arange(1, K + 1) - 1.0) / (2.0 * K))
    out = []
    for p in pts:
        moved = 0
        while exclusions.size and np.min(np.abs(exclusions - p)) <= tol:
            p = min(1.0, p + tol)
            moved += 1
            if moved > 1000 or (p == 1.0 and np.min(np.abs(exclusions - p)) <= tol):
                raise ValueError("cannot nudge grid point clear of exclusions")
        out.append(p)
    out = np.asarray(out)
    if exclusions.size:
        dist = np.min(np.abs(out[:, None] - exclusions[None, :]), axis=1)
        if np.any(dist <= tol / 2):
            raise ValueError("grid point stuck within tol/2 of an exclusion")
    if np.unique(out).size != out.size:
        raise ValueError("nudging produced coinciding grid points")
    return out


def extrema_grid(G: int) -> np.ndarray:
    """G Chebyshev extrema cos(pi k / (G-1)), k = 0..G-1, endpoints included."""
    if G < 2:
        raise ValueError("G must be >= 2")
    return np.cos(np.pi * np.arange(G) / (G - 1))
