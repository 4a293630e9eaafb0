"""Self-contained primal-dual interior-point solver for block SDPs.

Standard form:

    minimize    sum_b <C_b, X_b>  +  c_f . u
    subject to  sum_b <A_ib, X_b> +  F_i . u  =  b_i     (i = 1..m)
                X_b  PSD for every block b,   u free

A Mehrotra-style predictor-corrector iteration with Nesterov-Todd scaling is
used; the symmetrized search direction keeps the Schur complement symmetric
positive definite.  Free variables are handled by a bordered Schur system
eliminated with two Cholesky factorizations.  Everything is deterministic:
fixed initialization scaled by problem data norms, no randomization.

Primal infeasibility is reported only with a dual improving ray that passes an
independent recomputation (`verify_farkas_ray`); when the iteration stalls
without a verified ray the solver returns "iteration-limit" so callers never
mistake a stall for a verdict.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class SdpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE_CERTIFICATE = "infeasible-certificate"
    NUMERICAL_FAILURE = "numerical-failure"
    ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True)
class SdpOptions:
    """Solver tolerances and limits (defaults follow common conic practice)."""

    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    eig_tol: float = 1e-9
    max_iter: int = 200
    step_fraction: float = 0.98
    ray_tol: float = 1e-9
    # Trace penalty applied internally when the objective is identically zero,
    # so pure feasibility problems select a bounded analytic-center-like point.
    trace_penalty: float = 1e-9
    # Schur regularization added on factorization failure before giving up.
    regularization: float = 1e-12
    verbose: bool = False


class SdpBuildError(ValueError):
    pass


class SdpProblem:
    """Immutable standard-form problem over block PSD + free variables.

    Per block the constraint coefficients are kept as a CSR matrix of shape
    (m, n_b^2) whose rows are flattened *symmetric* matrices.  Use
    SdpProblemBuilder to construct instances.
    """

    __slots__ = ("block_sizes", "free_count", "m", "A", "F", "b", "C", "c_free")

    def __init__(self, block_sizes, free_count, A, F, b, C, c_free):
        self.block_sizes = tuple(int(n) for n in block_sizes)
        self.free_count = int(free_count)
        self.b = np.asarray(b, dtype=float)
        self.m = self.b.shape[0]
        self.A = A
        self.F = F
        self.C = [np.asarray(Cb, dtype=float) for Cb in C]
        self.c_free = np.asarray(c_free, dtype=float)
        if self.m < 1:
            raise SdpBuildError("constraint count m must be >= 1")
        if sum(self.block_sizes) + self.free_count < 1:
            raise SdpBuildError("total variable dimension must be >= 1")
        for n, Cb in zip(self.block_sizes, self.C):
            if Cb.shape != (n, n) or not np.allclose(Cb, Cb.T, atol=0, rtol=0):
                raise SdpBuildError("objective blocks must be symmetric n x n")

    @property
    def total_psd_dim(self) -> int:
        return sum(self.block_sizes)

    def constraint_matrix(self, row: int, block: int) -> np.ndarray:
        n = self.block_sizes[block]
        return np.asarray(self.A[block][row].todense()).reshape(n, n)

    def apply_A(self, X_blocks, u: Optional[np.ndarray] = None) -> np.ndarray:
        """A(X) + F u, recomputed from the raw data."""
        out = np.zeros(self.m)
        for blk, Xb in enumerate(X_blocks):
            out += self.A[blk] @ np.asarray(Xb, dtype=float).ravel()
        if self.free_count and u is not None:
            out += self.F @ np.asarray(u, dtype=float)
        return out

    def apply_AT(self, y: np.ndarray) -> list[np.ndarray]:
        """Adjoint: [sum_i y_i A_ib] per block."""
        out = []
        for blk, n in enumerate(self.block_sizes):
            v = self.A[blk].T @ y
            H = v.reshape(n, n)
            out.append(0.5 * (H + H.T))
        return out

    def data_scale(self) -> float:
        s = max(1.0, float(np.max(np.abs(self.b))) if self.m else 1.0)
        for blk in range(len(self.block_sizes)):
            data = self.A[blk].data
            if data.size:
                s = max(s, float(np.max(np.abs(data))))
        if self.free_count and self.F.nnz:
            s = max(s, float(np.max(np.abs(self.F.data))))
        return s


class SdpProblemBuilder:
    """Accumulates symmetric coefficient entries and builds an SdpProblem.

    set_entry(row, block, i, j, v) adds v * X_ij to constraint `row`
    (X symmetric; the (i, j) and (j, i) positions are populated so that
    <A, X> contributes exactly v times the common entry X_ij).
    """

    def __init__(self, block_sizes: Sequence[int], free_count: int = 0):
        self.block_sizes = tuple(int(n) for n in block_sizes)
        self.free_count = int(free_count)
        self._rows: list[float] = []
        self._entries: list[dict] = [dict() for _ in self.block_sizes]
        self._free_entries: dict = {}
        self._obj_entries: list[dict] = [dict() for _ in self.block_sizes]
        self._obj_free = np.zeros(self.free_count)

    def new_constraint(self, rhs: float) -> int:
        self._rows.append(float(rhs))
        return len(self._rows) - 1

    def set_rhs(self, row: int, rhs: float):
        self._rows[row] = float(rhs)

    def set_entry(self, row: int, block: int, i: int, j: int, value: float):
        n = self.block_sizes[block]
        if not (0 <= i < n and 0 <= j < n):
            raise SdpBuildError(f"entry ({i},{j}) outside block of size {n}")
        store = self._entries[block]
        if i == j:
            store[(row, i, i)] = store.get((row, i, i), 0.0) + value
        else:
            store[(row, i, j)] = store.get((row, i, j), 0.0) + 0.5 * value
            store[(row, j, i)] = store.get((row, j, i), 0.0) + 0.5 * value

    def set_free(self, row: int, k: int, value: float):
        if not (0 <= k < self.free_count):
            raise SdpBuildError(f"free index {k} out of range")
        self._free_entries[(row, k)] = self._free_entries.get((row, k), 0.0) + value

    def set_objective_entry(self, block: int, i: int, j: int, value: float):
        store = self._obj_entries[block]
        if i == j:
            store[(i, i)] = store.get((i, i), 0.0) + value
        else:
            store[(i, j)] = store.get((i, j), 0.0) + 0.5 * value
            store[(j, i)] = store.get((j, i), 0.0) + 0.5 * value

    def set_objective_free(self, k: int, value: float):
        self._obj_free[k] += value

    def add_trace_objective(self, weight: float):
        for blk, n in enumerate(self.block_sizes):
            for i in range(n):
                self.set_objective_entry(blk, i, i, weight)

    def build(self) -> SdpProblem:
        m = len(self._rows)
        A = []
        for blk, n in enumerate(self.block_sizes):
            entries = self._entries[blk]
            if entries:
                keys = np.array(list(entries.keys()), dtype=np.int64)
                vals = np.array(list(entries.values()))
                rows = keys[:, 0]
                cols = keys[:, 1] * n + keys[:, 2]
                A.append(sp.csr_matrix((vals, (rows, cols)), shape=(m, n * n)))
            else:
                A.append(sp.csr_matrix((m, n * n)))
        if self._free_entries:
            keys = np.array(list(self._free_entries.keys()), dtype=np.int64)
            vals = np.array(list(self._free_entries.values()))
            F = sp.csr_matrix(
                (vals, (keys[:, 0], keys[:, 1])), shape=(m, self.free_count)
            )
        else:
            F = sp.csr_matrix((m, self.free_count))
        C = []
        for blk, n in enumerate(self.block_sizes):
            Cb = np.zeros((n, n))
            for (i, j), v in self._obj_entries[blk].items():
                Cb[i, j] += v
            C.append(0.5 * (Cb + Cb.T))
        return SdpProblem(
            self.block_sizes, self.free_count, A, F, np.array(self._rows), C,
            self._obj_free.copy(),
        )


@dataclass
class SdpSolution:
    """Solver output; residual fields are the relative measures the solver
    terminated on (use `residuals` for absolute from-scratch recomputation)."""

    status: SdpStatus
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    u: np.ndarray
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int
    primal_objective: float = 0.0
    dual_objective: float = 0.0
    farkas_report: Optional[dict] = None
    notes: list[str] = field(default_factory=list)


def residuals(prob: SdpProblem, sol: SdpSolution) -> tuple[float, float, float]:
    """Recompute (primal-residual, dual-residual, complementarity gap).

    Everything is recomputed from the raw problem data: the primal residual is
    ||b - A(X) - F u||_2, the dual residual combines ||C - S - A^T(y)||_F over
    blocks with ||c_f - F^T y||_2, and the gap is sum_b <X_b, S_b> (equal to
    the duality gap at exact feasibility).
    """
    for blk, n in enumerate(prob.block_sizes):
        if np.asarray(sol.X[blk]).shape != (n, n):
            raise ValueError(f"X block {blk} has wrong shape")
        if np.asarray(sol.S[blk]).shape != (n, n):
            raise ValueError(f"S block {blk} has wrong shape")
    if sol.y.shape[0] != prob.m:
        raise ValueError("dual vector length mismatch")
    rp = prob.b - prob.apply_A(sol.X, sol.u)
    ATy = prob.apply_AT(sol.y)
    rd_sq = 0.0
    for blk in range(len(prob.block_sizes)):
        Rd = prob.C[blk] - sol.S[blk] - ATy[blk]
        rd_sq += float(np.sum(Rd * Rd))
    if prob.free_count:
        rf = prob.c_free - prob.F.T @ sol.y
        rd_sq += float(rf @ rf)
    comp = sum(float(np.sum(sol.X[b] * sol.S[b])) for b in range(len(prob.block_sizes)))
    return float(np.linalg.norm(rp)), math.sqrt(rd_sq), comp


def verify_farkas_ray(
    prob: SdpProblem, y: np.ndarray, tol: float = 1e-9
) -> tuple[bool, dict]:
    """Check a dual improving ray from scratch: b.y > 0, -A^T(y) PSD, F^T y = 0.

    The ray is normalized to b.y = 1 and tested with tolerances relative to the
    problem data scale (not the ray's own magnitude), so a feasible problem's
    bounded dual iterates cannot slip through.
    """
    val = float(prob.b @ y)
    report: dict = {"b_dot_y": val}
    if not (val > 0.0) or not np.isfinite(val):
        report["reason"] = "b.y not positive"
        return False, report
    ray = y / val
    scale = prob.data_scale()
    Z = prob.apply_AT(ray)
    min_eig = math.inf
    for Zb in Z:
        if Zb.size:
            w = sla.eigvalsh(-Zb, check_finite=False)
            min_eig = min(min_eig, float(w[0]))
    if min_eig is math.inf:
        min_eig = 0.0
    free_resid = 0.0
    if prob.free_count:
        free_resid = float(np.max(np.abs(prob.F.T @ ray))) if prob.F.nnz else 0.0
    report.update(
        {"min_eig_slack": min_eig, "free_residual": free_resid, "data_scale": scale}
    )
    ok = min_eig >= -tol * scale and free_resid <= tol * scale
    report["verified"] = ok
    return ok, report


class _Factorization:
    """Bordered Schur system [[M, F], [F^T, 0]] via two Cholesky factors.

    A small proximal term keeps the factors well conditioned near the optimal
    face; two rounds of iterative refinement recover the accuracy lost to it
    (and to the inherent ill-conditioning of the Schur complement as the
    barrier parameter vanishes).
    """

    def __init__(self, M: np.ndarray, Fd: Optional[np.ndarray], reg: float):
        n = M.shape[0]
        self.M = M
        self.Fd = Fd
        base = max(reg, 1e-14 * max(float(np.trace(M)) / max(n, 1), 1.0))
        attempt = 0
        while True:
            try:
                self.choM = sla.cho_factor(
                    M + (base * (10.0 ** attempt if attempt else 1.0)) * np.eye(n),
                    lower=True,
                    check_finite=False,
                )
                break
            except sla.LinAlgError:
                attempt += 1
                if attempt > 4:
                    raise
        if Fd is not None and Fd.size:
            self.Z = sla.cho_solve(self.choM, Fd, check_finite=False)
            K = Fd.T @ self.Z
            nf = K.shape[0]
            kreg = 1e-16 * max(float(np.trace(K)) / max(nf, 1), 1.0)
            attempt = 0
            while True:
                try:
                    self.choK = sla.cho_factor(
                        K + kreg * (10.0 ** attempt if attempt else 1.0) * np.eye(nf),
                        lower=True,
                        check_finite=False,
                    )
                    break
                except sla.LinAlgError:
                    attempt += 1
                    if attempt > 4:
                        raise
        else:
            self.Z = None
            self.choK = None

    def _solve_once(self, h: np.ndarray, rf: Optional[np.ndarray]):
        t = sla.cho_solve(self.choM, h, check_finite=False)
        if self.Z is None:
            return t, np.zeros(0)
        du = sla.cho_solve(self.choK, self.Fd.T @ t - rf, check_finite=False)
        dy = t - self.Z @ du
        return dy, du

    def solve(self, h: np.ndarray, rf: Optional[np.ndarray]):
        dy, du = self._solve_once(h, rf)
        for _ in range(2):
            res_h = h - self.M @ dy
            res_f = None
            if self.Z is not None:
                res_h -= self.Fd @ du
                res_f = rf - self.Fd.T @ dy
            cy, cu = self._solve_once(res_h, res_f)
            dy = dy + cy
            if self.Z is not None:
                du = du + cu
        return dy, du


def _chol_psd(Hb: np.ndarray) -> np.ndarray:
    """Lower Cholesky with escalating diagonal jitter for near-singular input."""
    n = Hb.shape[0]
    base = max(abs(float(np.trace(Hb))) / max(n, 1), 1.0)
    for k in range(5):
        jitter = 0.0 if k == 0 else base * 1e-14 * (100.0 ** (k - 1))
        try:
            return sla.cholesky(Hb + jitter * np.eye(n), lower=True, check_finite=False)
        except sla.LinAlgError:
            continue
    raise sla.LinAlgError("Cholesky failed after jitter escalation")


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest alpha in (0, 1] with X + alpha D PSD, where X = L L^T."""
    B = sla.solve_triangular(L, D, lower=True, check_finite=False)
    B = sla.solve_triangular(L, B.T, lower=True, check_finite=False)
    B = 0.5 * (B + B.T)
    lam = float(sla.eigvalsh(B, check_finite=False)[0])
    if lam >= -1e-14:
        return 1.0
    return min(1.0, -1.0 / lam)


class _Blocks:
    """Per-block prepared operators: scaled CSR A, reshaped view for W A W."""

    def __init__(self, prob: SdpProblem, row_scale: np.ndarray):
        self.sizes = prob.block_sizes
        inv = sp.diags(1.0 / row_scale)
        self.A = [inv @ prob.A[blk] for blk in range(len(self.sizes))]
        self.A2 = [
            self.A[blk].reshape(prob.m * n, n).tocsr() if n else self.A[blk]
            for blk, n in enumerate(self.sizes)
        ]
        self.F = (inv @ prob.F).tocsr() if prob.free_count else None
        self.m = prob.m

    def apply_A(self, H_blocks) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, H in enumerate(H_blocks):
            out += self.A[blk] @ H.ravel()
        return out

    def apply_AT(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for blk, n in enumerate(self.sizes):
            H = (self.A[blk].T @ y).reshape(n, n)
            out.append(0.5 * (H + H.T))
        return out

    def schur(self, W_blocks) -> np.ndarray:
        M = np.zeros((self.m, self.m))
        for blk, n in enumerate(self.sizes):
            if n == 0 or self.A[blk].nnz == 0:
                continue
            W = W_blocks[blk]
            R1 = self.A2[blk] @ W           # rows of A_k W, stacked
            T = np.matmul(W, R1.reshape(self.m, n, n))  # W A_k W
            M += self.A[blk] @ T.reshape(self.m, n * n).T
        return 0.5 * (M + M.T)


def solve(prob: SdpProblem, opts: SdpOptions = SdpOptions()) -> SdpSolution:
    """Solve a standard-form block SDP; see the module docstring.

    Returns status `optimal` when the relative primal/dual residuals are below
    feas_tol and the relative gap below gap_tol; `infeasible-certificate` only
    with an independently verified dual improving ray; `iteration-limit` on
    stall; `numerical-failure` when the Schur complement loses positive
    definiteness irrecoverably (after the regularization retry).
    """
    # Pure feasibility problems get a small trace penalty so that a bounded
    # analytic-center-like solution is selected; all residual measures are
    # then taken against the penalized objective, consistently.
    if all(not Cb.any() for Cb in prob.C) and not prob.c_free.any():
        C_pen = [opts.trace_penalty * np.eye(n) for n in prob.block_sizes]
        prob = SdpProblem(
            prob.block_sizes, prob.free_count, prob.A, prob.F, prob.b, C_pen,
            prob.c_free,
        )
        sol = _presolve_and_solve(prob, opts, depth=0)
        sol.notes.append("trace-penalty-objective")
        return sol
    return _presolve_and_solve(prob, opts, depth=0)


def _free_only_rows(prob: SdpProblem) -> np.ndarray:
    nnz = np.zeros(prob.m, dtype=np.int64)
    for blk in range(len(prob.block_sizes)):
        nnz += np.diff(prob.A[blk].indptr)
    return np.flatnonzero(nnz == 0)


def _relative_measures(prob, X, y, S, u):
    rp = prob.b - prob.apply_A(X, u)
    ATy = prob.apply_AT(y)
    rd_sq = 0.0
    for blk in range(len(prob.block_sizes)):
        Rd = prob.C[blk] - S[blk] - ATy[blk]
        rd_sq += float(np.sum(Rd * Rd))
    if prob.free_count:
        rf = prob.c_free - prob.F.T @ y
        rd_sq += float(rf @ rf)
    pobj = sum(float(np.sum(prob.C[b] * X[b])) for b in range(len(prob.block_sizes)))
    pobj += float(prob.c_free @ u) if prob.free_count else 0.0
    dobj = float(prob.b @ y)
    comp = sum(float(np.sum(X[b] * S[b])) for b in range(len(prob.block_sizes)))
    norm_b = float(np.linalg.norm(prob.b))
    norm_C = math.sqrt(
        sum(float(np.sum(Cb * Cb)) for Cb in prob.C)
        + float(prob.c_free @ prob.c_free)
    )
    rel_p = float(np.linalg.norm(rp)) / (1.0 + norm_b)
    rel_d = math.sqrt(rd_sq) / (1.0 + norm_C)
    rel_g = comp / (1.0 + abs(pobj) + abs(dobj))
    return rel_p, rel_d, rel_g, pobj, dobj


def _presolve_and_solve(prob: SdpProblem, opts: SdpOptions, depth: int) -> SdpSolution:
    """Eliminate constraints that touch no PSD block before the main iteration.

    Such rows (pure linear equations among free variables) make the Schur
    complement structurally singular.  They are solved directly: an
    inconsistent subsystem yields an immediate Farkas ray (the least-squares
    residual); a consistent one is substituted out through its null space.
    """
    R2 = _free_only_rows(prob)
    if R2.size == 0:
        return _solve_core(prob, opts, depth)
    mask = np.ones(prob.m, dtype=bool)
    mask[R2] = False
    R1 = np.flatnonzero(mask)
    nf = prob.free_count
    F2 = prob.F[R2].toarray() if nf else np.zeros((R2.size, 0))
    b2 = prob.b[R2]
    if nf:
        u0, *_ = np.linalg.lstsq(F2, b2, rcond=None)
    else:
        u0 = np.zeros(0)
    r = b2 - (F2 @ u0 if nf else 0.0)
    scale = prob.data_scale()
    if float(np.max(np.abs(r), initial=0.0)) > 1e-9 * scale:
        # Inconsistent: the residual is orthogonal to range(F2), so it lifts
        # to a dual improving ray supported on the eliminated rows.
        y_ray = np.zeros(prob.m)
        y_ray[R2] = r / float(b2 @ r)
        ok, report = verify_farkas_ray(prob, y_ray, opts.ray_tol)
        if ok:
            report["source"] = "presolve-inconsistent-linear-rows"
            return SdpSolution(
                status=SdpStatus.INFEASIBLE_CERTIFICATE,
                X=[np.zeros((n, n)) for n in prob.block_sizes],
                y=y_ray,
                S=[-H for H in prob.apply_AT(y_ray)],
                u=np.zeros(nf),
                primal_residual=math.inf,
                dual_residual=0.0,
                duality_gap=math.inf,
                iterations=0,
                farkas_report=report,
            )
    N = sla.null_space(F2) if nf else np.zeros((0, 0))
    k = N.shape[1]
    F1 = prob.F[R1]
    b1 = prob.b[R1] - (F1 @ u0 if nf else 0.0)
    A1 = [prob.A[blk][R1] for blk in range(len(prob.block_sizes))]
    obj_shift = float(prob.c_free @ u0) if nf else 0.0

    def recover_full(sol_red: SdpSolution, y_red: np.ndarray) -> SdpSolution:
        y_full = np.zeros(prob.m)
        y_full[R1] = y_red
        target = prob.c_free - (F1.T @ y_red if nf else 0.0)
        if R2.size and nf:
            y2, *_ = np.linalg.lstsq(F2.T, target, rcond=None)
            y_full[R2] = y2
        elif R2.size:
            y_full[R2] = 0.0
        u_full = u0 + (N @ sol_red.u if k else np.zeros(nf))
        sol_red.y = y_full
        sol_red.u = u_full
        return sol_red

    if R1.size == 0:
        # Nothing left but the cone at its analytic-center: X = 0, S = C.
        X = [np.zeros((n, n)) for n in prob.block_sizes]
        S = [Cb.copy() for Cb in prob.C]
        minC = min(
            (float(sla.eigvalsh(Cb, check_finite=False)[0]) for Cb in prob.C if Cb.size),
            default=0.0,
        )
        sol = SdpSolution(
            status=SdpStatus.OPTIMAL if minC >= -opts.eig_tol else SdpStatus.NUMERICAL_FAILURE,
            X=X, y=np.zeros(0), S=S, u=np.zeros(k),
            primal_residual=0.0, dual_residual=0.0, duality_gap=0.0,
            iterations=0,
            notes=["free-only problem solved by presolve"],
        )
        sol = recover_full(sol, np.zeros(0))
        rel_p, rel_d, rel_g, pobj, dobj = _relative_measures(
            prob, sol.X, sol.y, sol.S, sol.u
        )
        sol.primal_residual, sol.dual_residual, sol.duality_gap = rel_p, rel_d, rel_g
        sol.primal_objective, sol.dual_objective = pobj, dobj
        if sol.status is SdpStatus.OPTIMAL and max(rel_p, rel_d) > 10 * opts.feas_tol:
            sol.status = SdpStatus.ITERATION_LIMIT
            sol.notes.append("presolve recovery exceeded tolerance")
        return sol

    reduced = SdpProblem(
        prob.block_sizes,
        k,
        A1,
        sp.csr_matrix(F1 @ N) if (nf and k) else sp.csr_matrix((R1.size, k)),
        b1,
        prob.C,
        (N.T @ prob.c_free) if k else np.zeros(0),
    )
    sol = _solve_core(reduced, opts, depth)
    y_red = sol.y
    sol = recover_full(sol, y_red)
    if sol.status is SdpStatus.INFEASIBLE_CERTIFICATE:
        # Lift the reduced ray back to the full row space and re-verify.
        y_lift = np.zeros(prob.m)
        y_lift[R1] = y_red
        if R2.size and nf:
            y2, *_ = np.linalg.lstsq(F2.T, -(F1.T @ y_red), rcond=None)
            y_lift[R2] = y2
        ok, report = verify_farkas_ray(prob, y_lift, opts.ray_tol)
        if ok:
            val = float(prob.b @ y_lift)
            sol.y = y_lift / val
            sol.S = [-H for H in prob.apply_AT(sol.y)]
            sol.farkas_report = report
            return sol
        sol.status = SdpStatus.ITERATION_LIMIT
        sol.notes.append("reduced-space ray did not lift; demoted to iteration-limit")
        return sol
    if sol.status is SdpStatus.OPTIMAL:
        rel_p, rel_d, rel_g, pobj, dobj = _relative_measures(
            prob, sol.X, sol.y, sol.S, sol.u
        )
        sol.primal_residual, sol.dual_residual, sol.duality_gap = rel_p, rel_d, rel_g
        sol.primal_objective, sol.dual_objective = pobj, dobj
        if max(rel_p, rel_d) > 10 * opts.feas_tol or rel_g > 10 * opts.gap_tol:
            sol.status = SdpStatus.ITERATION_LIMIT
            sol.notes.append("presolve recovery exceeded tolerance")
    sol.notes.append(f"presolve eliminated {R2.size} linear rows")
    return sol


def _solve_core(prob: SdpProblem, opts: SdpOptions, depth: int) -> SdpSolution:
    nblocks = len(prob.block_sizes)
    notes: list[str] = []
    C = [Cb.copy() for Cb in prob.C]
    c_free = prob.c_free.copy()

    # Row scaling (status is invariant under row rescaling of the input).
    row_norm = np.zeros(prob.m)
    for blk in range(nblocks):
        row_norm += np.asarray(
            prob.A[blk].multiply(prob.A[blk]).sum(axis=1)
        ).ravel()
    if prob.free_count:
        row_norm += np.asarray(prob.F.multiply(prob.F).sum(axis=1)).ravel()
    row_scale = np.sqrt(row_norm)
    max_scale = float(np.max(row_scale)) if prob.m else 1.0
    if max_scale <= 0:
        max_scale = 1.0
    row_scale = np.maximum(row_scale, 1e-12 * max_scale)

    ops = _Blocks(prob, row_scale)
    b_s = prob.b / row_scale
    nf = prob.free_count

    norm_b = float(np.linalg.norm(b_s))
    norm_C = math.sqrt(
        sum(float(np.sum(Cb * Cb)) for Cb in C) + float(c_free @ c_free)
    )

    # Deterministic initialization scaled by data norms.
    xi = max(10.0, math.sqrt(max(prob.total_psd_dim, 1)), 2.0 * norm_b)
    eta = max(10.0, math.sqrt(max(prob.total_psd_dim, 1)), 2.0 * norm_C)
    X = [xi * np.eye(n) for n in prob.block_sizes]
    S = [eta * np.eye(n) for n in prob.block_sizes]
    y = np.zeros(prob.m)
    u = np.zeros(nf)

    total_n = max(prob.total_psd_dim, 1)
    tiny_steps = 0
    it = 0

    def current_measures():
        rp = b_s - ops.apply_A(X)
        if nf:
            rp -= ops.F @ u
        ATy = ops.apply_AT(y)
        Rd = [C[blk] - S[blk] - ATy[blk] for blk in range(nblocks)]
        rf = (c_free - ops.F.T @ y) if nf else None
        pobj = sum(float(np.sum(C[blk] * X[blk])) for blk in range(nblocks))
        pobj += float(c_free @ u) if nf else 0.0
        dobj = float(b_s @ y)
        comp = sum(float(np.sum(X[blk] * S[blk])) for blk in range(nblocks))
        rel_p = float(np.linalg.norm(rp)) / (1.0 + norm_b)
        rd_sq = sum(float(np.sum(R * R)) for R in Rd)
        if nf:
            rd_sq += float(rf @ rf)
        rel_d = math.sqrt(rd_sq) / (1.0 + norm_C)
        # Complementarity is the optimality measure; the objective gap equals
        # it up to residual terms once rp and rd are small, and stays
        # meaningful for feasibility problems with a tiny trace penalty.
        rel_g = comp / (1.0 + abs(pobj) + abs(dobj))
        return rp, Rd, rf, pobj, dobj, comp, rel_p, rel_d, rel_g

    def finish(status, rel_p, rel_d, rel_g, pobj, dobj, farkas=None):
        y_out = y / row_scale
        return SdpSolution(
            status=status,
            X=[Xb.copy() for Xb in X],
            y=y_out,
            S=[Sb.copy() for Sb in S],
            u=u.copy(),
            primal_residual=rel_p,
            dual_residual=rel_d,
            duality_gap=rel_g,
            iterations=it,
            primal_objective=pobj,
            dual_objective=float(prob.b @ y_out),
            farkas_report=farkas,
            notes=notes,
        )

    for it in range(1, opts.max_iter + 1):
        rp, Rd, rf, pobj, dobj, comp, rel_p, rel_d, rel_g = current_measures()
        mu = comp / total_n

        if rel_p <= opts.feas_tol and rel_d <= opts.feas_tol and rel_g <= opts.gap_tol:
            return finish(SdpStatus.OPTIMAL, rel_p, rel_d, rel_g, pobj, dobj)

        if it >= 3 and dobj > 1e-6:
            y_un = y / row_scale
            ok, report = verify_farkas_ray(prob, y_un, opts.ray_tol)
            if ok:
                val = float(prob.b @ y_un)
                ray = y_un / val
                Zb = [-H for H in prob.apply_AT(ray)]
                sol = finish(
                    SdpStatus.INFEASIBLE_CERTIFICATE, rel_p, rel_d, rel_g, pobj,
                    dobj, farkas=report,
                )
                sol.y = ray
                sol.S = Zb
                return sol

        try:
            Lx = [_chol_psd(X[blk]) for blk in range(nblocks)]
            Ls = [_chol_psd(S[blk]) for blk in range(nblocks)]
            W = []
            Sinv = []
            for blk, n in enumerate(prob.block_sizes):
                if n == 0:
                    W.append(np.zeros((0, 0)))
                    Sinv.append(np.zeros((0, 0)))
                    continue
                U, sig, Vt = sla.svd(Ls[blk].T @ Lx[blk], check_finite=False)
                sig = np.maximum(sig, 1e-150)
                G = Lx[blk] @ (Vt.T / np.sqrt(sig))
                W.append(G @ G.T)
                eye = np.eye(n)
                Sinv.append(
                    sla.cho_solve((Ls[blk], True), eye, check_finite=False)
                )
            M = ops.schur(W)
            Fd = ops.F.toarray() if nf else None
            fact = _Factorization(M, Fd, opts.regularization * max(1.0, float(np.trace(M)) / prob.m))
        except sla.LinAlgError:
            return finish(
                SdpStatus.NUMERICAL_FAILURE, rel_p, rel_d, rel_g, pobj, dobj
            )

        def apply_schur(dy):
            ATdy = ops.apply_AT(dy)
            return ops.apply_A(
                [W[blk] @ ATdy[blk] @ W[blk] for blk in range(nblocks)]
            )

        def direction(Rc):
            H = [
                Rc[blk] - W[blk] @ Rd[blk] @ W[blk] for blk in range(nblocks)
            ]
            h = rp - ops.apply_A(H)
            dy, du = fact.solve(h, rf)
            # Refine against the true operator: the assembled Schur matrix
            # carries formation roundoff that the factorization-level
            # refinement cannot see.  Iterate while the residual keeps
            # contracting (the regularized factors act as a preconditioner).
            scale_h = float(np.linalg.norm(h)) + 1.0
            prev = math.inf
            for _ in range(10):
                res_h = h - apply_schur(dy)
                res_f = None
                size = float(np.linalg.norm(res_h))
                if nf:
                    res_h -= ops.F @ du
                    res_f = rf - ops.F.T @ dy
                    size = math.hypot(float(np.linalg.norm(res_h)), float(np.linalg.norm(res_f)))
                if size <= 1e-13 * scale_h or size >= 0.7 * prev:
                    break
                prev = size
                cy, cu = fact.solve(res_h, res_f)
                dy = dy + cy
                if nf:
                    du = du + cu
            ATdy = ops.apply_AT(dy)
            dS = [Rd[blk] - ATdy[blk] for blk in range(nblocks)]
            dX = []
            for blk in range(nblocks):
                D = H[blk] + W[blk] @ ATdy[blk] @ W[blk]
                dX.append(0.5 * (D + D.T))
            return dX, dy, dS, du

        # Predictor: affine direction (sigma = 0).
        Rc_aff = [-X[blk] for blk in range(nblocks)]
        try:
            dX_a, dy_a, dS_a, du_a = direction(Rc_aff)
        except sla.LinAlgError:
            return finish(SdpStatus.NUMERICAL_FAILURE, rel_p, rel_d, rel_g, pobj, dobj)

        ap_aff = min(
            (_max_step(Lx[blk], dX_a[blk]) for blk in range(nblocks) if prob.block_sizes[blk]),
            default=1.0,
        )
        ad_aff = min(
            (_max_step(Ls[blk], dS_a[blk]) for blk in range(nblocks) if prob.block_sizes[blk]),
            default=1.0,
        )
        comp_aff = sum(
            float(np.sum((X[blk] + ap_aff * dX_a[blk]) * (S[blk] + ad_aff * dS_a[blk])))
            for blk in range(nblocks)
        )
        mu_aff = max(comp_aff, 0.0) / total_n
        sigma = min(max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-10), 0.99999)
        # Safeguards.  First: when the affine step is blocked near the cone
        # boundary, recenter instead of trusting the Mehrotra estimate.
        sigma = max(sigma, (1.0 - min(ap_aff, ad_aff)) ** 3 * 0.99)
        # Second: complementarity must not race ahead of feasibility, or the
        # Schur system degenerates while the residuals are still large.
        feas = max(rel_p, rel_d)
        mu_rel = comp / (1.0 + abs(pobj) + abs(dobj))
        if feas > mu_rel and mu > 0:
            sigma = min(max(sigma, min(0.9, 0.1 * feas / max(mu_rel, 1e-300))), 0.99)

        # Corrector with Mehrotra second-order term.
        Rc = []
        for blk, n in enumerate(prob.block_sizes):
            P = dX_a[blk] @ dS_a[blk] @ Sinv[blk]
            Rc.append(sigma * mu * Sinv[blk] - X[blk] - 0.5 * (P + P.T))
        try:
            dX, dy, dS, du = direction(Rc)
        except sla.LinAlgError:
            return finish(SdpStatus.NUMERICAL_FAILURE, rel_p, rel_d, rel_g, pobj, dobj)

        ap = opts.step_fraction * min(
            (_max_step(Lx[blk], dX[blk]) for blk in range(nblocks) if prob.block_sizes[blk]),
            default=1.0,
        )
        ad = opts.step_fraction * min(
            (_max_step(Ls[blk], dS[blk]) for blk in range(nblocks) if prob.block_sizes[blk]),
            default=1.0,
        )
        ap, ad = min(ap, 1.0), min(ad, 1.0)
        if feas > mu_rel:
            # Feasibility lags: move primal and dual together so the residual
            # contraction rates stay coupled to the complementarity reduction.
            ap = ad = min(ap, ad)

        for blk in range(nblocks):
            X[blk] = X[blk] + ap * dX[blk]
            S[blk] = S[blk] + ad * dS[blk]
        y = y + ad * dy
        if nf:
            u = u + ap * du

        if opts.verbose:
            print(
                f"  it {it:3d}  mu {mu:9.2e}  rp {rel_p:9.2e}  rd {rel_d:9.2e}"
                f"  gap {rel_g:9.2e}  ap {ap:5.3f} ad {ad:5.3f} sigma {sigma:5.3f}"
            )

        tiny_steps = tiny_steps + 1 if max(ap, ad) < 1e-4 else 0
        if tiny_steps >= 5:
            notes.append("stalled: consecutive tiny steps")
            break
        if mu < 1e-30 and rel_p > opts.feas_tol:
            notes.append("complementarity collapsed while infeasible")
            break

    rp, Rd, rf, pobj, dobj, comp, rel_p, rel_d, rel_g = current_measures()
    if rel_p <= opts.feas_tol and rel_d <= opts.feas_tol and rel_g <= opts.gap_tol:
        return finish(SdpStatus.OPTIMAL, rel_p, rel_d, rel_g, pobj, dobj)

    # Last attempt: explicit Farkas subproblem on instances small enough.
    aux = _try_auxiliary_farkas(prob, opts, depth) if depth == 0 else None
    if aux is not None:
        ray, report = aux
        sol = finish(
            SdpStatus.INFEASIBLE_CERTIFICATE, rel_p, rel_d, rel_g, pobj, dobj,
            farkas=report,
        )
        sol.y = ray
        sol.S = [-H for H in prob.apply_AT(ray)]
        return sol
    return finish(SdpStatus.ITERATION_LIMIT, rel_p, rel_d, rel_g, pobj, dobj)


_AUX_ROW_LIMIT = 5000
_AUX_FREE_LIMIT = 1500


def _try_auxiliary_farkas(prob: SdpProblem, opts: SdpOptions, depth: int):
    """Solve for an explicit dual improving ray: A^T(y) <= 0, F^T y = 0, b.y = 1.

    Returns (ray, report) when the auxiliary solve succeeds and the ray passes
    the independent verification; None otherwise.  Skipped for instances whose
    auxiliary encoding would be larger than the original problem is worth.
    """
    aux_rows = sum(n * (n + 1) // 2 for n in prob.block_sizes) + prob.free_count + 1
    if aux_rows > _AUX_ROW_LIMIT or prob.m > _AUX_FREE_LIMIT:
        return None
    builder = SdpProblemBuilder(prob.block_sizes, free_count=prob.m)
    for blk, n in enumerate(prob.block_sizes):
        Acsc = prob.A[blk].tocsc()
        for i in range(n):
            for j in range(i, n):
                row = builder.new_constraint(0.0)
                builder.set_entry(row, blk, i, j, 1.0)
                col = Acsc[:, i * n + j]
                for k, v in zip(col.indices, col.data):
                    mult = 1.0 if i == j else 2.0
                    builder.set_free(row, int(k), mult * float(v))
    if prob.free_count:
        Fcsc = prob.F.tocsc()
        for c in range(prob.free_count):
            row = builder.new_constraint(0.0)
            col = Fcsc[:, c]
            for k, v in zip(col.indices, col.data):
                builder.set_free(row, int(k), float(v))
    row = builder.new_constraint(1.0)
    for k in range(prob.m):
        if prob.b[k] != 0.0:
            builder.set_free(row, k, float(prob.b[k]))
    aux = builder.build()
    aux_opts = SdpOptions(
        feas_tol=max(opts.feas_tol, 1e-9),
        gap_tol=max(opts.gap_tol, 1e-9),
        max_iter=min(opts.max_iter, 100),
    )
    sol = _presolve_and_solve(aux, aux_opts, depth + 1)
    if sol.status is not SdpStatus.OPTIMAL:
        return None
    ray = sol.u
    ok, report = verify_farkas_ray(prob, ray, opts.ray_tol)
    if not ok:
        return None
    report["source"] = "auxiliary-farkas-solve"
    return ray / float(prob.b @ ray), report


def dump_problem(prob: SdpProblem) -> str:
    """Serialize in the documented sparse text format for external cross-checks.

    Header lines give block sizes, free count and constraint count; each data
    line is one nonzero: `A row block i j value` for constraint matrices
    (upper triangle, value = matrix entry), `F row k value`, `b row value`,
    `C block i j value`, `cfree k value`.
    """
    lines = [
        "sdp-dump v1",
        "blocks " + " ".join(str(n) for n in prob.block_sizes),
        f"free {prob.free_count}",
        f"constraints {prob.m}",
    ]
    for blk, n in enumerate(prob.block_sizes):
        coo = prob.A[blk].tocoo()
        for r, flat, v in zip(coo.row, coo.col, coo.data):
            i, j = divmod(int(flat), n)
            if i <= j:
                lines.append(f"A {int(r)} {blk} {i} {j} {float(v)!r}")
    if prob.free_count:
        coo = prob.F.tocoo()
        for r, k, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"F {int(r)} {int(k)} {float(v)!r}")
    for r, v in enumerate(prob.b):
        if v != 0.0:
            lines.append(f"b {r} {float(v)!r}")
    for blk, Cb in enumerate(prob.C):
        for i in range(Cb.shape[0]):
            for j in range(i, Cb.shape[0]):
                if Cb[i, j] != 0.0:
                    lines.append(f"C {blk} {i} {j} {float(Cb[i, j])!r}")
    for k, v in enumerate(prob.c_free):
        if v != 0.0:
            lines.append(f"cfree {k} {float(v)!r}")
    return "\n".join(lines) + "\n"


def parse_dump(text: str) -> SdpProblem:
    """Inverse of dump_problem (used by the round-trip tests)."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    assert lines[0].startswith("sdp-dump")
    block_sizes = [int(t) for t in lines[1].split()[1:]]
    free_count = int(lines[2].split()[1])
    m = int(lines[3].split()[1])
    builder = SdpProblemBuilder(block_sizes, free_count)
    b = np.zeros(m)
    for _ in range(m):
        builder.new_constraint(0.0)
    for ln in lines[4:]:
        parts = ln.split()
        tag = parts[0]
        if tag == "A":
            r, blk, i, j = (int(t) for t in parts[1:5])
            v = float(parts[5])
            builder.set_entry(r, blk, i, j, v if i == j else 2.0 * v)
        elif tag == "F":
            builder.set_free(int(parts[1]), int(parts[2]), float(parts[3]))
        elif tag == "b":
            b[int(parts[1])] = float(parts[2])
        elif tag == "C":
            blk, i, j = int(parts[1]), int(parts[2]), int(parts[3])
            v = float(parts[4])
            builder.set_objective_entry(blk, i, j, v if i == j else 2.0 * v)
        elif tag == "cfree":
            builder.set_objective_free(int(parts[1]), float(parts[2]))
    for r, v in enumerate(b):
        builder.set_rhs(r, v)
    return builder.build()
