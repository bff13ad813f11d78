"""Constrained approximate inverse of a mixing estimate.

Solves ``min_B 1/2 |I - A_hat B|_F^2  subject to  B X >= 0`` and recovers the
sources as ``B X``.  The objective couples the rows of ``B`` through
``A_hat^T A_hat`` while each constraint involves a single row, so the problem
does not split by rows or by columns.

Numerics
--------
With ``A_hat = U diag(sv) V^T`` and ``H = diag(sv) V^T B`` the objective
becomes ``1/2 |H - U^T|_F^2``: an identity Hessian, whatever the conditioning
of ``A_hat``.  The solver is a primal active-set method in ``H`` started from
a feasible shift of the pseudo-inverse, so every accepted step lowers the
objective.  ``B = V diag(1/sv) H`` has entries of order ``1/sv_min``, and a
float64 ``B`` cannot place ``B X`` closer to zero than about
``eps * |B| |X|``.  Each constraint is therefore tightened to
``B X >= 4 (n + 1) eps |B_ref| |X|``, which keeps the rounded ``B`` feasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MixingEstimate, SolverReport, condition_number, unit_sum_columns
from .errors import ConvergenceError, SolverError, UsageError

__all__ = ["QpOptions", "QpResult", "qp_objective", "kkt_residuals", "refine_inverse", "implied_mixing"]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QpOptions:
    feas_tol: float = 1e-9
    stat_tol: float = 1e-7
    max_iters: int = 200
    norm_floor: float | None = None  # drop columns below this fraction of the largest norm

    def __post_init__(self):
        if self.feas_tol <= 0 or self.stat_tol <= 0:
            raise UsageError("tolerances must be positive")
        if self.max_iters < 1:
            raise UsageError("max_iters must be >= 1")
        if self.norm_floor is not None and not 0 < self.norm_floor < 1:
            raise UsageError("norm_floor must lie in (0, 1)")


@dataclass
class QpResult:
    B: np.ndarray
    S_hat: np.ndarray
    multipliers: np.ndarray  # (n, p), zero on inactive constraints
    report: SolverReport
    A_hat: np.ndarray
    gain: np.ndarray  # A_hat @ B, evaluated in whitened coordinates
    start_objective: float  # objective at the feasible start, an upper bound
    active: list[tuple[int, int]] = field(default_factory=list)


def qp_objective(A_hat, B) -> float:
    A_hat = np.asarray(A_hat, dtype=float)
    R = np.eye(A_hat.shape[0]) - A_hat @ np.asarray(B, dtype=float)
    return 0.5 * float(np.sum(R * R))


def kkt_residuals(B, multipliers, A_hat, X) -> dict[str, float]:
    """First-order certificate of ``B`` for the constrained inverse problem.

    Returns dimensionless residuals:

    ``feasibility``
        ``max(0, -min(B X)) / max|B X|``.
    ``stationarity``
        ``|A^T (A B - I) - L X^T|_F / |A|_F``.
    ``dual_feasibility``
        ``max(0, -min(L)) / max|L|``.
    ``complementarity``
        multiplier-weighted mean of ``|B X|_il / (max_k |b_k| |x_l|)``.  The
        largest row norm is used because a row of ``B`` may legitimately
        shrink to zero, which would make a per-row scale meaningless.
    """
    B = np.asarray(B, dtype=float)
    L = np.asarray(multipliers, dtype=float)
    A = np.asarray(A_hat, dtype=float)
    X = np.asarray(X, dtype=float)
    BX = B @ X
    top = np.max(np.abs(BX))
    feas = max(0.0, -float(BX.min())) / top if top > 0 else 0.0
    G = A.T @ (A @ B - np.eye(A.shape[0])) - L @ X.T
    stat = float(np.linalg.norm(G) / np.linalg.norm(A))
    lmax = np.max(np.abs(L)) if L.size else 0.0
    dual = max(0.0, -float(L.min())) / lmax if lmax > 0 else 0.0
    Lp = np.maximum(L, 0.0)
    if Lp.sum() > 0:
        scale = np.linalg.norm(B, axis=1).max() * np.linalg.norm(X, axis=0)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(scale > 0, np.abs(BX) / scale, 0.0)
        comp = float(np.sum(Lp * rel) / Lp.sum())
    else:
        comp = 0.0
    return {"feasibility": feas, "stationarity": stat, "dual_feasibility": dual, "complementarity": comp}


def _objective(H, H0) -> float:
    D = H - H0
    return 0.5 * float(np.sum(D * D))


def _margin(B_abs, absX) -> np.ndarray:
    n = B_abs.shape[0]
    return 4.0 * (n + 1) * _EPS * (B_abs @ absX)


def _feasible_start(A, B_pinv, X, colsum, margin) -> np.ndarray:
    """Pseudo-inverse made feasible by a row shift along the all-ones vector.

    The shifted matrix is then pulled towards zero (``B = 0`` is always
    feasible) by the scalar that minimizes the objective along that ray.
    """
    n = A.shape[0]
    if X.shape[1] == 0:
        return B_pinv

    def shifted(Bm):
        tau = np.max((margin - Bm @ X) / colsum, axis=1)
        return Bm + (np.maximum(tau, 0.0) * (1.0 + 1e-12))[:, None]

    G = A @ shifted(B_pinv)
    gg = float(np.sum(G * G))
    t = 1.0 if gg == 0 else min(1.0, max(0.0, float(np.trace(G)) / gg))
    cand = [shifted(B_pinv), shifted(t * B_pinv)]
    return min(cand, key=lambda Bm: float(np.sum((np.eye(n) - A @ Bm) ** 2)))


class _ActiveSet:
    """Primal active-set iterations in whitened coordinates.

    Keeps ``K H X >= margin`` while moving ``H`` toward ``H0``.  Each step
    goes toward the minimizer on the current working set and stops at the
    first blocking constraint, so the objective never increases.
    """

    def __init__(self, K, H0, X, gnorm, margin, H):
        self.K, self.H0, self.X, self.gnorm, self.margin = K, H0, X, gnorm, margin
        self.absX = np.abs(X)
        self.n, self.p = H0.shape[0], X.shape[1]
        self.H = H
        self.W: list[int] = []
        self.mu = np.zeros(0)
        self.history = [_objective(H, H0)]
        self.iterations = 0
        self.converged = False
        self.message = "iteration cap reached"

    def _normal(self, j):
        i, l = divmod(j, self.p)
        return np.outer(self.K[i], self.X[:, l]).ravel() / self.gnorm[i, l]

    def refresh(self, margin):
        # constraints tight under the old margins are slack now
        self.margin = margin
        self.W = []
        self.converged = False
        self.message = "iteration cap reached"

    def run(self, budget: int):
        n, K, X, H0 = self.n, self.K, self.X, self.H0
        h_scale = max(1.0, float(np.linalg.norm(H0)))
        for _ in range(max(budget, 0)):
            self.iterations += 1
            W = self.W
            R = (H0 - self.H).ravel()
            if W:
                N = np.column_stack([self._normal(j) for j in W])
                Q, _ = np.linalg.qr(N)
                P = R - Q @ (Q.T @ R)
            else:
                N = np.zeros((n * n, 0))
                P = R
            rnorm = float(np.linalg.norm(R))
            if np.linalg.norm(P) <= 1e-13 * h_scale + 256 * _EPS * rnorm:
                if not W:
                    self.converged, self.message = True, "unconstrained optimum is feasible"
                    return
                mu = np.linalg.lstsq(N, -R, rcond=None)[0]
                k = int(np.argmin(mu))
                if mu[k] >= -1e-10 * max(rnorm, 1e-300):
                    self.mu = mu
                    self.converged, self.message = True, "KKT point"
                    return
                W.pop(k)
                continue
            Pm = P.reshape(n, n)
            C = (K @ self.H) @ X - self.margin
            D = K @ Pm @ X
            # P is R minus its projection, so its rounding error scales with R
            noise = 64 * _EPS * (np.abs(K) @ (np.abs(Pm) + np.abs(R).max()) @ self.absX)
            block = D < -noise
            if W:
                block.ravel()[W] = False
            alpha, j_block = 1.0, -1
            if block.any():
                ratios = np.full(C.shape, np.inf)
                ratios[block] = np.maximum(C[block], 0.0) / -D[block]
                rmin = float(ratios.min())
                if rmin < 1.0:
                    # among (near-)ties take the steepest normalized decrease
                    ties = ratios <= rmin + 1e-12 * max(rmin, 1e-300)
                    steep = np.where(ties, D / self.gnorm, np.inf)
                    alpha, j_block = rmin, int(np.argmin(steep))
            self.H = self.H + alpha * Pm
            self.history.append(_objective(self.H, H0))
            if j_block >= 0:
                W.append(j_block)
        self.mu = np.zeros(0)


def refine_inverse(A_hat, X, opts: QpOptions | None = None) -> QpResult:
    """Minimize ``1/2 |I - A_hat B|_F^2`` subject to ``B X >= 0``.

    Raises :class:`ConvergenceError` (with the best iterate in ``.result``)
    if ``opts.max_iters`` active-set iterations do not reach the tolerances.
    """
    opts = opts or QpOptions()
    if isinstance(A_hat, MixingEstimate):
        A_hat = A_hat.matrix
    A = np.asarray(A_hat, dtype=float)
    X_full = np.asarray(X, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"A_hat must be square, got {A.shape}")
    if X_full.ndim != 2 or X_full.shape[0] != A.shape[0]:
        raise UsageError(f"X must have {A.shape[0]} rows, got {X_full.shape}")
    n = A.shape[0]

    norms = np.linalg.norm(X_full, axis=0)
    keep = norms > 0
    if opts.norm_floor is not None and norms.size:
        keep &= norms >= opts.norm_floor * norms.max()
    cols = np.flatnonzero(keep)
    # columns with identical directions give identical constraints; keep one
    # representative each (clamped noise produces many exact duplicates)
    if cols.size:
        _, first = np.unique(X_full[:, cols] / norms[cols], axis=1, return_index=True)
        cols = cols[np.sort(first)]
    X = X_full[:, cols]
    p = X.shape[1]

    U, sv, Vt = np.linalg.svd(A)
    if sv[-1] <= 0 or sv[-1] <= 1e3 * _EPS * sv[0]:
        raise SolverError("A_hat is numerically singular", condition_number=condition_number(A))
    K = Vt.T / sv  # B = K @ H
    H0 = U.T.copy()
    SVt = sv[:, None] * Vt  # H = SVt @ B

    absX = np.abs(X)
    colsum = X.sum(axis=0)
    if p and np.any(colsum <= 0):
        raise UsageError("constraint columns of X must be nonnegative and nonzero")
    B_pinv = K @ H0
    if p:
        tau0 = np.max(np.maximum(-(B_pinv @ X), 0.0) / colsum, axis=1)
        B_ref = np.maximum(np.abs(B_pinv), np.abs(B_pinv + tau0[:, None]))
    else:
        B_ref = np.abs(B_pinv)
    margin = _margin(B_ref, absX)
    H = SVt @ _feasible_start(A, B_pinv, X, colsum, margin)

    knorm = np.linalg.norm(K, axis=1)
    gnorm = np.outer(knorm, np.linalg.norm(X, axis=0))  # |G_il| in H coordinates
    start_obj = _objective(H, H0)
    state = _ActiveSet(K, H0, X, gnorm, margin, H)
    state.run(opts.max_iters)
    if state.converged:
        # the first margins follow |B| at the start, which can be far larger
        # than the solution; refresh them from the solution and continue
        fresh = np.minimum(margin, _margin(np.abs(K @ state.H), absX))
        if np.any(fresh < 0.25 * margin):
            state.refresh(fresh)
            state.run(opts.max_iters - state.iterations)
    H, W, mu, history, it = state.H, state.W, state.mu, state.history, state.iterations
    converged, message = state.converged, state.message

    B = K @ H
    gain = U @ H
    L = np.zeros((n, X_full.shape[1]))
    active = []
    for j, m in zip(W, mu if len(mu) == len(W) else np.zeros(len(W))):
        i, l = divmod(j, p)
        L[i, cols[l]] = max(float(m), 0.0) / gnorm[i, l]
        active.append((int(i), int(cols[l])))
    res = kkt_residuals(B, L, A, X_full)
    ok = (
        converged
        and res["feasibility"] <= opts.feas_tol
        and res["stationarity"] <= opts.stat_tol
        and res["complementarity"] <= opts.stat_tol
    )
    if converged and not ok:
        message = "KKT point outside tolerances: " + ", ".join(f"{k}={v:.2e}" for k, v in res.items())
    report = SolverReport(
        iterations=it,
        objective=0.5 * float(np.sum((np.eye(n) - gain) ** 2)),
        feasibility=res["feasibility"],
        stationarity=res["stationarity"],
        complementarity=res["complementarity"],
        converged=ok,
        objective_history=history,
        message=message,
    )
    result = QpResult(
        B=B,
        S_hat=B @ X_full,
        multipliers=L,
        report=report,
        A_hat=A,
        gain=gain,
        start_objective=start_obj,
        active=active,
    )
    if not ok:
        raise ConvergenceError(f"constrained inverse did not converge: {message}", result=result)
    return result


def implied_mixing(B, A_hat=None, rtol: float = 1e-14) -> MixingEstimate:
    """Mixing matrix implied by an approximate inverse.

    ``B`` may be a matrix or a :class:`QpResult`; for the latter the inverse
    is formed as ``solve(A_hat B, A_hat)`` from the whitened product, which
    stays accurate when ``B`` itself is ill conditioned.  Each column gets
    the positive least-squares factor onto the matching column of ``A_hat``
    (unit column sums when no ``A_hat`` is available).
    """
    if isinstance(B, QpResult):
        A_hat = B.A_hat if A_hat is None else A_hat
        gain = B.gain
        cond = condition_number(B.B)
        try:
            M = np.linalg.solve(gain, np.asarray(A_hat, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise SolverError("A_hat B is singular", condition_number=cond) from exc
    else:
        B = np.asarray(B, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise UsageError(f"B must be square, got {B.shape}")
        cond = condition_number(B)
        if not np.isfinite(cond) or cond * rtol >= 1:
            raise SolverError(f"B is numerically singular (condition number {cond:.3g})", condition_number=cond)
        M = np.linalg.inv(B)
    if A_hat is not None:
        if isinstance(A_hat, MixingEstimate):
            A_hat = A_hat.matrix
        A_hat = np.asarray(A_hat, dtype=float)
        c = np.einsum("ij,ij->j", M, A_hat) / np.einsum("ij,ij->j", M, M)
        if not np.all(c > 0):
            raise SolverError("an implied mixing column points away from A_hat", condition_number=cond)
        M = M * c
    else:
        M = unit_sum_columns(M)
    return MixingEstimate(M, provenance="refined", notes={"inverse_condition_number": cond})
