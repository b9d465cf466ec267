"""Standard-form conic programs and their solution.

A problem is

    minimize    c.x + offset
    subject to  A x = b
                x restricted blockwise to free / nonnegative /
                second-order / PSD cones,

where a psd(d) block holds the scaled upper-triangular vectorization of a
symmetric d x d matrix (column-major, off-diagonals multiplied by sqrt(2),
so the packed dot product equals the trace inner product).

The PSD/SOC path is solved with Clarabel (interior point); problems with
only free and nonnegative blocks go through HiGHS via scipy.linprog.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy import linalg as sla
from scipy.optimize import linprog

import clarabel

logger = logging.getLogger("optrec.conic")

ROOT2 = math.sqrt(2.0)

FREE = "free"
NONNEGATIVE = "nonnegative"
SECOND_ORDER = "second_order"
PSD = "psd"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


def svec_index(i: int, j: int) -> int:
    """Packed index of matrix entry (i, j), i <= j, column-major upper triangle."""
    return j * (j + 1) // 2 + i


def svec_size(d: int) -> int:
    return d * (d + 1) // 2


def unpack_psd(packed: np.ndarray, d: int) -> np.ndarray:
    """Inverse of the scaled upper-triangular vectorization."""
    X = np.zeros((d, d))
    k = 0
    for j in range(d):
        for i in range(j + 1):
            v = packed[k]
            if i == j:
                X[i, i] = v
            else:
                X[i, j] = X[j, i] = v / ROOT2
            k += 1
    return X


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    start: int
    size: int
    order: int | None = None  # matrix order for psd blocks

    def __post_init__(self):
        if self.kind not in (FREE, NONNEGATIVE, SECOND_ORDER, PSD):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.kind == PSD:
            if self.order is None or svec_size(self.order) != self.size:
                raise ValueError("psd block size must be order*(order+1)/2")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.size)


@dataclass(frozen=True)
class ConicProblem:
    objective: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    blocks: tuple[ConeBlock, ...]
    num_vars: int
    objective_offset: float = 0.0

    def __post_init__(self):
        cover = 0
        for blk in self.blocks:
            if blk.start != cover:
                raise ValueError("cone blocks must partition the variables in order")
            cover += blk.size
        if cover != self.num_vars:
            raise ValueError("cone blocks must cover every variable exactly once")
        if self.objective.shape != (self.num_vars,):
            raise ValueError("objective length mismatch")
        if self.A.shape[1] != self.num_vars or self.A.shape[0] != self.b.size:
            raise ValueError("equality system shape mismatch")

    @property
    def is_linear(self) -> bool:
        return all(blk.kind in (FREE, NONNEGATIVE) for blk in self.blocks)


@dataclass(frozen=True)
class ConicSolution:
    status: str
    x: np.ndarray | None
    dual_eq: np.ndarray | None
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    solver: str
    iterations: int = 0
    certificate: np.ndarray | None = None
    dropped_rows: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class ProblemBuilder:
    """Incremental assembly of a ConicProblem in standard form."""

    def __init__(self):
        self._blocks: list[ConeBlock] = []
        self._num_vars = 0
        self._rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._rhs: list[float] = []
        self._obj: dict[int, float] = {}
        self._offset = 0.0

    def _add_block(self, kind, size, order=None) -> np.ndarray:
        blk = ConeBlock(kind=kind, start=self._num_vars, size=size, order=order)
        self._blocks.append(blk)
        self._num_vars += size
        return blk.indices

    def add_free(self, size: int) -> np.ndarray:
        return self._add_block(FREE, size)

    def add_nonnegative(self, size: int) -> np.ndarray:
        return self._add_block(NONNEGATIVE, size)

    def add_second_order(self, size: int) -> np.ndarray:
        return self._add_block(SECOND_ORDER, size)

    def add_psd(self, order: int) -> np.ndarray:
        return self._add_block(PSD, svec_size(order), order=order)

    def add_equality(self, cols, coefs, rhs: float) -> None:
        cols = np.asarray(cols, dtype=int)
        coefs = np.asarray(coefs, dtype=float)
        keep = coefs != 0.0
        self._rows.append((cols[keep], coefs[keep]))
        self._rhs.append(float(rhs))

    def add_objective(self, cols, coefs) -> None:
        for c, v in zip(np.atleast_1d(cols), np.atleast_1d(coefs)):
            self._obj[int(c)] = self._obj.get(int(c), 0.0) + float(v)

    def add_offset(self, value: float) -> None:
        self._offset += float(value)

    # Modeling gadgets shared by the recovery programs.

    def add_abs_slacks(self, var_idx) -> np.ndarray:
        """s_i >= |x_i| via s free, s +- x captured by nonnegative slacks."""
        var_idx = np.asarray(var_idx, dtype=int)
        k = var_idx.size
        s = self.add_free(k)
        tp = self.add_nonnegative(k)
        tm = self.add_nonnegative(k)
        for i in range(k):
            self.add_equality([tp[i], s[i], var_idx[i]], [1.0, -1.0, -1.0], 0.0)
            self.add_equality([tm[i], s[i], var_idx[i]], [1.0, -1.0, 1.0], 0.0)
        return s

    def add_max_abs_bound(self, var_idx) -> int:
        """w >= max_i |x_i| via a single free bound variable."""
        var_idx = np.asarray(var_idx, dtype=int)
        w = self.add_free(1)[0]
        tp = self.add_nonnegative(var_idx.size)
        tm = self.add_nonnegative(var_idx.size)
        for i, v in enumerate(var_idx):
            self.add_equality([tp[i], w, v], [1.0, -1.0, -1.0], 0.0)
            self.add_equality([tm[i], w, v], [1.0, -1.0, 1.0], 0.0)
        return w

    def add_euclidean_bound(self, var_idx) -> int:
        """t >= ||x||_2 via a second-order cone block tied to x."""
        var_idx = np.asarray(var_idx, dtype=int)
        q = self.add_second_order(var_idx.size + 1)
        for i, v in enumerate(var_idx):
            self.add_equality([q[i + 1], v], [1.0, -1.0], 0.0)
        return q[0]

    def build(self) -> ConicProblem:
        c = np.zeros(self._num_vars)
        for j, v in self._obj.items():
            c[j] = v
        rows_i, cols_j, vals = [], [], []
        for r, (cols, coefs) in enumerate(self._rows):
            rows_i.extend([r] * cols.size)
            cols_j.extend(cols.tolist())
            vals.extend(coefs.tolist())
        A = sparse.csr_matrix(
            (vals, (rows_i, cols_j)), shape=(len(self._rows), self._num_vars)
        )
        return ConicProblem(
            objective=c,
            A=A,
            b=np.asarray(self._rhs, dtype=float),
            blocks=tuple(self._blocks),
            num_vars=self._num_vars,
            objective_offset=self._offset,
        )


def _peel_structural_rows(A: sparse.csr_matrix) -> np.ndarray:
    """Boolean mask of rows NOT provably independent by singleton-column peeling.

    A row owning a column that appears in no other active row is independent
    of all remaining rows; peeling repeatedly leaves the (usually tiny)
    subsystem whose rank actually needs checking.
    """
    coo = A.tocoo()
    n_rows, n_cols = A.shape
    row_active = np.ones(n_rows, dtype=bool)
    nnz_active = np.ones(coo.nnz, dtype=bool)
    while True:
        counts = np.bincount(coo.col[nnz_active], minlength=n_cols)
        singleton = counts == 1
        hits = nnz_active & singleton[coo.col]
        peel = np.unique(coo.row[hits])
        peel = peel[row_active[peel]]
        if peel.size == 0:
            return row_active
        row_active[peel] = False
        nnz_active &= row_active[coo.row]


def preprocess_equalities(A: sparse.csr_matrix, b: np.ndarray):
    """Reduce (A, b) to full row rank.

    Returns (kept_row_indices, n_dropped, infeasible_flag).  Redundant rows
    are dropped with a log entry; a redundant row with inconsistent
    right-hand side marks the system infeasible.
    """
    n_rows = A.shape[0]
    if n_rows == 0:
        return np.arange(0), 0, False
    residual_mask = _peel_structural_rows(A)
    res_idx = np.flatnonzero(residual_mask)
    if res_idx.size == 0:
        return np.arange(n_rows), 0, False

    R = A[res_idx]
    cols = np.unique(R.tocoo().col)
    Rd = np.asarray(R[:, cols].todense()) if cols.size else np.zeros((res_idx.size, 0))
    if Rd.shape[1] == 0:
        rank = 0
        perm = np.arange(res_idx.size)
    else:
        _, Rq, perm = sla.qr(Rd.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(Rq))
        scale = diag[0] if diag.size and diag[0] > 0 else 1.0
        rank = int(np.sum(diag > max(Rd.shape) * np.finfo(float).eps * scale))
    indep_local = np.sort(perm[:rank])
    redundant_local = np.setdiff1d(np.arange(res_idx.size), indep_local)
    if redundant_local.size == 0:
        return np.arange(n_rows), 0, False

    # Consistency of the dropped rows: each is a combination of the kept
    # residual rows; its rhs must match that combination's rhs.
    b_res = b[res_idx]
    R_ind = Rd[indep_local]
    infeasible = False
    for loc in redundant_local:
        if rank == 0:
            mismatch = abs(b_res[loc])
        else:
            coef, *_ = np.linalg.lstsq(R_ind.T, Rd[loc], rcond=None)
            mismatch = abs(coef @ b_res[indep_local] - b_res[loc])
        if mismatch > 1e-9 * (1.0 + np.max(np.abs(b)) if b.size else 1.0):
            infeasible = True
            break
    dropped_global = res_idx[redundant_local]
    kept = np.setdiff1d(np.arange(n_rows), dropped_global)
    logger.info(
        "dropped %d redundant equality row(s) out of %d", dropped_global.size, n_rows
    )
    return kept, int(dropped_global.size), infeasible


def _failure(status, solver, n_dropped=0) -> ConicSolution:
    return ConicSolution(
        status=status,
        x=None,
        dual_eq=None,
        objective=math.nan,
        primal_residual=math.nan,
        dual_residual=math.nan,
        duality_gap=math.nan,
        solver=solver,
        dropped_rows=n_dropped,
    )


def _validate_tol(tol: float) -> float:
    if not 1e-12 <= tol <= 1e-2:
        raise ValueError(f"tol = {tol} outside [1e-12, 1e-2]")
    return float(tol)


def lp_solve(problem: ConicProblem, tol: float = 1e-8) -> ConicSolution:
    """Solve a problem with only free/nonnegative blocks via HiGHS."""
    tol = _validate_tol(tol)
    if not problem.is_linear:
        raise ValueError("lp_solve only accepts free/nonnegative blocks")
    kept, n_dropped, infeasible = preprocess_equalities(problem.A, problem.b)
    if infeasible:
        return _failure(INFEASIBLE, "highs", n_dropped)
    A_eq = problem.A[kept] if kept.size else None
    b_eq = problem.b[kept] if kept.size else None

    bounds = np.empty((problem.num_vars, 2), dtype=object)
    for blk in problem.blocks:
        lo = 0.0 if blk.kind == NONNEGATIVE else None
        bounds[blk.start : blk.start + blk.size] = (lo, None)
    res = linprog(
        problem.objective,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=list(map(tuple, bounds)),
        method="highs",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": max(tol, 1e-10),
            "dual_feasibility_tolerance": max(tol, 1e-10),
        },
    )
    if res.status == 2:
        return _failure(INFEASIBLE, "highs", n_dropped)
    if res.status == 3:
        return _failure(UNBOUNDED, "highs", n_dropped)
    if res.status != 0 or res.x is None:
        return _failure(NUMERICAL_FAILURE, "highs", n_dropped)

    x = np.asarray(res.x, dtype=float)
    y = np.asarray(res.eqlin.marginals, dtype=float) if kept.size else np.zeros(0)
    primal_obj = float(problem.objective @ x) + problem.objective_offset
    dual_obj = float(b_eq @ y) + problem.objective_offset if kept.size else primal_obj
    r_prim = _primal_residual(problem, x)
    gap = abs(primal_obj - dual_obj) / (1.0 + abs(primal_obj) + abs(dual_obj))
    return ConicSolution(
        status=OPTIMAL,
        x=x,
        dual_eq=y,
        objective=primal_obj,
        primal_residual=r_prim,
        dual_residual=0.0,
        duality_gap=gap,
        solver="highs",
        iterations=int(getattr(res, "nit", 0)),
        dropped_rows=n_dropped,
    )


def _primal_residual(problem: ConicProblem, x: np.ndarray) -> float:
    if problem.A.shape[0]:
        scale = 1.0 + (np.max(np.abs(problem.b)) if problem.b.size else 0.0)
        r = np.max(np.abs(problem.A @ x - problem.b)) / scale
    else:
        r = 0.0
    return float(max(r, _cone_violation(problem, x)))


def _cone_violation(problem: ConicProblem, x: np.ndarray) -> float:
    worst = 0.0
    for blk in problem.blocks:
        v = x[blk.start : blk.start + blk.size]
        if blk.kind == NONNEGATIVE and v.size:
            worst = max(worst, float(-np.min(v)))
        elif blk.kind == SECOND_ORDER:
            worst = max(worst, float(np.linalg.norm(v[1:]) - v[0]))
        elif blk.kind == PSD:
            eigmin = float(np.linalg.eigvalsh(unpack_psd(v, blk.order))[0])
            worst = max(worst, -eigmin)
    return worst


def solve(problem: ConicProblem, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve a standard-form conic problem.

    Never raises for solver outcomes: infeasible / unbounded /
    numerical_failure are reported through the status field.
    """
    tol = _validate_tol(tol)
    if problem.is_linear:
        return lp_solve(problem, tol)

    kept, n_dropped, infeasible = preprocess_equalities(problem.A, problem.b)
    if infeasible:
        return _failure(INFEASIBLE, "clarabel", n_dropped)
    A_eq = problem.A[kept]
    b_eq = problem.b[kept]

    cone_rows = []
    cones = [clarabel.ZeroConeT(int(A_eq.shape[0]))] if A_eq.shape[0] else []
    for blk in problem.blocks:
        if blk.kind == FREE:
            continue
        block_rows = sparse.csr_matrix(
            (
                -np.ones(blk.size),
                (np.arange(blk.size), blk.indices),
            ),
            shape=(blk.size, problem.num_vars),
        )
        cone_rows.append(block_rows)
        if blk.kind == NONNEGATIVE:
            cones.append(clarabel.NonnegativeConeT(blk.size))
        elif blk.kind == SECOND_ORDER:
            cones.append(clarabel.SecondOrderConeT(blk.size))
        else:
            cones.append(clarabel.PSDTriangleConeT(blk.order))

    A_all = sparse.vstack([A_eq] + cone_rows, format="csc") if cone_rows else A_eq.tocsc()
    b_all = np.concatenate([b_eq, np.zeros(sum(m.shape[0] for m in cone_rows))])
    P = sparse.csc_matrix((problem.num_vars, problem.num_vars))

    # Solve two orders tighter than promised so the reported objective sits
    # well inside the contractual tolerance even when only AlmostSolved.
    inner_tol = max(tol * 1e-2, 1e-12)

    def attempt(static_reg: bool):
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = max_iter
        settings.tol_gap_abs = inner_tol
        settings.tol_gap_rel = inner_tol
        settings.tol_feas = inner_tol
        # Static KKT regularization caps the attainable accuracy around its
        # epsilon; with full-row-rank equalities the dynamic regularization
        # alone is usually enough and two orders more accurate.
        settings.static_regularization_enable = static_reg
        solver = clarabel.DefaultSolver(P, problem.objective, A_all, b_all, cones, settings)
        return solver.solve()

    sol = attempt(static_reg=False)
    status = str(sol.status)
    if status not in ("Solved", "PrimalInfeasible", "DualInfeasible"):
        logger.info("clarabel without static regularization: %s; retrying", status)
        retry = attempt(static_reg=True)
        if str(retry.status) == "Solved" or str(sol.status) in (
            "NumericalError",
            "InsufficientProgress",
            "Unsolved",
        ):
            sol, status = retry, str(retry.status)

    n_eq = A_eq.shape[0]
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        cert = np.asarray(sol.z)[:n_eq] if n_eq else None
        return ConicSolution(
            status=INFEASIBLE,
            x=None,
            dual_eq=None,
            objective=math.nan,
            primal_residual=math.nan,
            dual_residual=math.nan,
            duality_gap=math.nan,
            solver="clarabel",
            iterations=sol.iterations,
            certificate=cert,
            dropped_rows=n_dropped,
        )
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return _failure(UNBOUNDED, "clarabel", n_dropped)

    x = np.asarray(sol.x, dtype=float)
    primal_obj = float(sol.obj_val) + problem.objective_offset
    dual_obj = float(sol.obj_val_dual) + problem.objective_offset
    gap = abs(primal_obj - dual_obj) / (1.0 + abs(primal_obj) + abs(dual_obj))
    achieved = max(sol.r_prim, sol.r_dual, gap)
    if status == "Solved" or (status == "AlmostSolved" and achieved <= tol):
        out_status = OPTIMAL
    else:
        logger.warning("clarabel returned %s (achieved %.2e)", status, achieved)
        out_status = NUMERICAL_FAILURE
    return ConicSolution(
        status=out_status,
        x=x if out_status == OPTIMAL else None,
        dual_eq=np.asarray(sol.z)[:n_eq] if n_eq else np.zeros(0),
        objective=primal_obj,
        primal_residual=float(sol.r_prim),
        dual_residual=float(sol.r_dual),
        duality_gap=gap,
        solver="clarabel",
        iterations=sol.iterations,
        dropped_rows=n_dropped,
    )


def check_solution(problem: ConicProblem, solution: ConicSolution) -> dict:
    """Recompute feasibility measures of a solution from scratch (test hook)."""
    if solution.x is None:
        raise ValueError("no primal point to check")
    return {
        "equality_residual": float(
            np.max(np.abs(problem.A @ solution.x - problem.b)) if problem.b.size else 0.0
        ),
        "cone_violation": _cone_violation(problem, solution.x),
        "objective": float(problem.objective @ solution.x) + problem.objective_offset,
    }


def dump_triplets(problem: ConicProblem, fileobj) -> None:
    """Plain-text debug dump: one line per nonzero (row, col, value)."""
    fileobj.write(f"# conic problem: vars={problem.num_vars} rows={problem.A.shape[0]}\n")
    fileobj.write(f"offset {problem.objective_offset!r}\n")
    for blk in problem.blocks:
        tail = f" {blk.order}" if blk.order is not None else ""
        fileobj.write(f"block {blk.kind} {blk.start} {blk.size}{tail}\n")
    for j in np.flatnonzero(problem.objective):
        fileobj.write(f"c {j} {problem.objective[j]!r}\n")
    coo = problem.A.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        fileobj.write(f"A {r} {c} {v!r}\n")
    for r in np.flatnonzero(problem.b):
        fileobj.write(f"b {r} {problem.b[r]!r}\n")
