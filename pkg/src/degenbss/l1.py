"""Sparse nonnegative source recovery, one data column at a time.

For each column ``x`` of ``X`` the penalized problem

    min_{s >= 0}  mu * sum(s) + 1/2 |A s - x|^2

is solved by accelerated proximal gradient (shrink by ``mu * step``, then
clamp at zero).  Every few iterations the current support is polished by
solving the reduced normal equations exactly, and the polished point is kept
only when it passes the first-order certificate.  The exact linear program
``min sum(s) s.t. A s = x, s >= 0`` is solved by a small dense simplex method
and serves as the ``mu -> 0`` oracle.

All columns are processed together as one batch; each column's iterates depend
only on that column, so results do not depend on batch composition.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import MixingEstimate, NonnegMatrix
from .errors import ConvergenceError, DataError, InfeasibleError, UsageError

__all__ = [
    "L1Options",
    "ColumnSolveReport",
    "L1Result",
    "l1_certificate",
    "solve_column_penalized",
    "solve_column_lp",
    "recover_sources_l1",
]

_POLISH_EVERY = 25
_FAIL_FRACTION = 0.01


@dataclass(frozen=True)
class L1Options:
    """Options for the sparse recovery step.

    Parameters
    ----------
    mu : float, optional
        Absolute penalty weight.  When omitted, ``mu_scale * max|A^T X|`` is
        used, which keeps the behavior independent of the data amplitude.
    mu_scale : float
        Relative penalty used when ``mu`` is omitted.
    max_iters : int
        Proximal-gradient iteration cap per column.
    step_rule : {"fixed", "backtracking"}
        ``fixed`` uses ``1 / |A|_2^2``; ``backtracking`` starts from a
        smaller curvature estimate per column and doubles it on failure.
    tol : float
        Relative tolerance of the first-order certificate.
    mode : {"penalized", "lp"}
    eq_tol : float
        Equality tolerance of the LP, relative to ``|x|``.
    """

    mu: float | None = None
    mu_scale: float = 1e-4
    max_iters: int = 5000
    step_rule: str = "backtracking"
    tol: float = 1e-8
    mode: str = "penalized"
    eq_tol: float = 1e-8

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0:
            raise UsageError("mu must be > 0")
        if not self.mu_scale > 0 or not self.tol > 0 or not self.eq_tol > 0:
            raise UsageError("mu_scale, tol and eq_tol must be > 0")
        if self.max_iters < 1:
            raise UsageError("max_iters must be >= 1")
        if self.step_rule not in ("fixed", "backtracking"):
            raise UsageError(f"unknown step_rule {self.step_rule!r}")
        if self.mode not in ("penalized", "lp"):
            raise UsageError(f"unknown mode {self.mode!r}")


@dataclass
class ColumnSolveReport:
    col: int
    objective: float
    fit_residual: float
    nnz: int
    iterations: int
    converged: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class L1Result:
    """Recovered sources plus per-column reports.

    Reports refer to the column-normalized matrix ``A / column_norms`` that
    the solver actually sees.  Unpacks as ``S_hat, reports``.
    """

    S_hat: NonnegMatrix
    reports: list[ColumnSolveReport]
    mu: float
    column_norms: np.ndarray
    failed_columns: list[int] = field(default_factory=list)

    def __iter__(self):
        return iter((self.S_hat, self.reports))


def _objective(A, S, X, mu):
    R = A @ S - X
    return mu * S.sum(axis=0) + 0.5 * np.sum(R * R, axis=0), np.linalg.norm(R, axis=0)


def l1_certificate(A, S, X, mu) -> np.ndarray:
    """Per-column first-order residual of the penalized problem, relative to ``max(|A^T x|_inf, mu)``.

    With ``g = A^T (A s - x) + mu``, optimality needs ``g_j = 0`` where
    ``s_j > 0`` and ``g_j >= 0`` where ``s_j = 0``.
    """
    A = np.asarray(A, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float).T).T
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    g = A.T @ (A @ S - X) + mu
    viol = np.where(S > 0, np.abs(g), np.maximum(-g, 0.0))
    scale = np.maximum(np.max(np.abs(A.T @ X), axis=0), mu)
    return viol.max(axis=0) / scale


def _polish(G, AtX, S, mu, cols):
    """Solve the normal equations on each column's current support."""
    out = S[:, cols].copy()
    supp = S[:, cols] > 0
    keys, inverse = np.unique(supp, axis=1, return_inverse=True)
    inverse = np.ravel(inverse)
    for k in range(keys.shape[1]):
        mask = keys[:, k]
        members = np.flatnonzero(inverse == k)
        if not mask.any():
            out[:, members] = 0.0
            continue
        rhs = AtX[np.ix_(mask, cols[members])] - mu
        try:
            sol = np.linalg.solve(G[np.ix_(mask, mask)], rhs)
        except np.linalg.LinAlgError:
            continue
        block = np.zeros((S.shape[0], members.size))
        block[mask] = sol
        out[:, members] = block
    return out


def _penalized_batch(A, X, mu, opts: L1Options):
    n, p = A.shape[1], X.shape[1]
    G = A.T @ A
    AtX = A.T @ X
    L_max = float(np.linalg.norm(A, 2) ** 2)
    if L_max == 0:
        raise UsageError("mixing estimate is all zeros")
    S = np.zeros((n, p))
    Y = S.copy()
    t = np.ones(p)
    L = np.full(p, L_max if opts.step_rule == "fixed" else max(np.trace(G) / n, L_max / 64))
    iters = np.zeros(p, dtype=int)
    done = l1_certificate(A, S, X, mu) <= opts.tol
    it = 0
    for it in range(1, opts.max_iters + 1):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        Ya = Y[:, act]
        grad = G @ Ya - AtX[:, act] + mu
        Xa = X[:, act]
        fY, _ = _objective(A, Ya, Xa, 0.0)
        while True:
            Snew = np.maximum(Ya - grad / L[act], 0.0)
            if opts.step_rule == "fixed":
                break
            D = Snew - Ya
            fS, _ = _objective(A, Snew, Xa, 0.0)
            bound = fY + np.sum(grad * D, axis=0) - mu * D.sum(axis=0) + 0.5 * L[act] * np.sum(D * D, axis=0)
            bad = fS > bound + 1e-15 * np.maximum(np.abs(fY), 1.0)
            if not bad.any():
                break
            L[act[bad]] = np.minimum(2 * L[act[bad]], L_max)
            bad &= L[act] < L_max  # at the global bound the step is always valid
            if not bad.any():
                Snew = np.maximum(Ya - grad / L[act], 0.0)
                break
        Sold = S[:, act]
        tnew = 0.5 * (1 + np.sqrt(1 + 4 * t[act] ** 2))
        mom = (t[act] - 1) / tnew
        # gradient-based restart keeps the objective from oscillating
        restart = np.sum((Ya - Snew) * (Snew - Sold), axis=0) > 0
        mom[restart] = 0.0
        tnew[restart] = 1.0
        S[:, act] = Snew
        Y[:, act] = Snew + mom * (Snew - Sold)
        t[act] = tnew
        iters[act] = it
        if it % _POLISH_EVERY == 0:
            P = _polish(G, AtX, S, mu, act)
            ok = (P.min(axis=0) >= 0) & (l1_certificate(A, P, X[:, act], mu) <= opts.tol)
            S[:, act[ok]] = P[:, ok]
            Y[:, act[ok]] = P[:, ok]
        done[act] = l1_certificate(A, S[:, act], X[:, act], mu) <= opts.tol
    return S, iters, done


def _reports(A, S, X, mu, iters, done):
    obj, res = _objective(A, S, X, mu)
    return [
        ColumnSolveReport(k, float(obj[k]), float(res[k]), int(np.count_nonzero(S[:, k])), int(iters[k]), bool(done[k]))
        for k in range(S.shape[1])
    ]


def solve_column_penalized(A_hat, x, opts: L1Options | None = None, mu: float | None = None):
    """Nonnegative penalized solve of a single column.

    ``mu`` overrides ``opts.mu``; without either, ``opts.mu_scale * |A^T x|_inf``
    is used.  Returns ``(s, ColumnSolveReport)``.
    """
    opts = opts or L1Options()
    A = _as_array(A_hat)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != A.shape[0]:
        raise UsageError(f"x has {x.size} entries, A_hat has {A.shape[0]} rows")
    mu = _resolve_mu(A, x[:, None], opts, mu)
    S, iters, done = _penalized_batch(A, x[:, None], mu, opts)
    rep = _reports(A, S, x[:, None], mu, iters, done)[0]
    if not done[0]:
        raise ConvergenceError(f"penalized solve hit {opts.max_iters} iterations", result=(S[:, 0], rep))
    return S[:, 0], rep


def _pivot_solve(M, basis, rhs):
    return np.linalg.solve(M[:, basis], rhs)


def _simplex(M, b, c, basis, allowed, tol):
    """Revised simplex with Bland's rule; ``basis`` is modified in place."""
    m = M.shape[0]
    for _ in range(50 * (M.shape[1] + m) + 100):
        xB = _pivot_solve(M, basis, b)
        y = np.linalg.solve(M[:, basis].T, c[basis])
        red = c - M.T @ y
        enter = -1
        for j in range(M.shape[1]):
            if allowed[j] and j not in basis and red[j] < -tol:
                enter = j
                break
        if enter < 0:
            return xB, y
        d = _pivot_solve(M, basis, M[:, enter])
        pos = d > tol
        if not pos.any():
            raise DataError("linear program is unbounded")
        ratios = np.where(pos, np.maximum(xB, 0.0) / np.where(pos, d, 1.0), np.inf)
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, best))
        leave = min(ties, key=lambda r: basis[r])
        basis[leave] = enter
    raise ConvergenceError("simplex iteration cap reached")


def solve_column_lp(A_hat, x, tol: float = 1e-8) -> np.ndarray:
    """``min sum(s)`` subject to ``A_hat s = x`` (within ``tol * |x|``) and ``s >= 0``.

    Raises
    ------
    InfeasibleError
        When ``x`` lies outside the cone of ``A_hat``.  The ``certificate``
        attribute holds ``y`` with ``A_hat^T y >= 0`` and ``y . x < 0``.
    """
    A = _as_array(A_hat)
    x = np.asarray(x, dtype=float).ravel()
    m, n = A.shape
    if x.size != m:
        raise UsageError(f"x has {x.size} entries, A_hat has {m} rows")
    xnorm = float(np.linalg.norm(x))
    if xnorm == 0:
        return np.zeros(n)
    scale = max(float(np.abs(A).max()), 1e-300)
    sign = np.where(x < 0, -1.0, 1.0)
    M = np.hstack([sign[:, None] * A / scale, np.eye(m)])
    b = sign * x / xnorm
    ptol = 1e-12

    # phase I: minimize the artificial mass
    c1 = np.r_[np.zeros(n), np.ones(m)]
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    xB, y1 = _simplex(M, b, c1, basis, allowed, ptol)
    infeas = float(sum(v for v, j in zip(xB, basis) if j >= n))
    if infeas > tol:
        y = -sign * y1 + 0.0
        raise InfeasibleError(
            f"x is outside the nonnegative cone of A_hat (residual {infeas * xnorm:.3g})", certificate=y
        )
    # drive zero-level artificials out of the basis where possible
    for r in range(m):
        if basis[r] < n:
            continue
        Binv_row = np.linalg.solve(M[:, basis].T, np.eye(m)[r])
        cand = [j for j in range(n) if j not in basis and abs(Binv_row @ M[:, j]) > 1e-9]
        if cand:
            basis[r] = cand[0]
    # an artificial that cannot leave marks a redundant equality; since the
    # artificial columns are unit vectors, dropping those rows keeps the
    # structural part of the basis nonsingular
    keep_rows = [r for r in range(m) if basis[r] < n]
    M, b = M[keep_rows][:, :n], b[keep_rows]
    basis = [basis[r] for r in keep_rows]
    allowed = np.ones(M.shape[1], dtype=bool)
    c2 = np.ones(M.shape[1])
    xB, _ = _simplex(M, b, c2, basis, allowed, ptol)
    s = np.zeros(n)
    s[basis] = np.maximum(xB, 0.0)
    s = s * xnorm / scale
    if np.linalg.norm(A @ s - x) > tol * xnorm * 10:
        raise DataError("LP solution violates the equality tolerance")
    return s


def _as_array(A_hat) -> np.ndarray:
    if isinstance(A_hat, MixingEstimate):
        A_hat = A_hat.matrix
    A = np.asarray(A_hat, dtype=float)
    if A.ndim != 2:
        raise UsageError("A_hat must be 2-D")
    return A


def _resolve_mu(A, X, opts: L1Options, mu: float | None) -> float:
    if mu is not None:
        if not mu > 0:
            raise UsageError("mu must be > 0")
        return float(mu)
    if opts.mu is not None:
        return float(opts.mu)
    top = float(np.max(np.abs(A.T @ X))) if X.size else 0.0
    return opts.mu_scale * top if top > 0 else opts.mu_scale


def recover_sources_l1(A_hat, X, opts: L1Options | None = None) -> L1Result:
    """Sparse nonnegative recovery of every column of ``X``.

    The columns of ``A_hat`` are first scaled to unit Euclidean norm and the
    solution is mapped back afterwards.  Without this step a unit-sum
    ``A_hat`` would make ``sum(s) = sum(x)`` on the whole feasible set, and
    the l1 term could not tell sparse representations from dense ones.

    A column fails when the penalized solver hits its iteration cap or the LP
    is infeasible; failed LP columns fall back to the penalized solution.
    The call raises only if more than 1% of the columns fail.
    """
    opts = opts or L1Options()
    A = _as_array(A_hat)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != A.shape[0]:
        raise UsageError(f"X must have {A.shape[0]} rows, got {X.shape}")
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise DataError("A_hat has a zero column")
    An = A / norms
    mu = _resolve_mu(An, X, opts, None)
    S, iters, done = _penalized_batch(An, X, mu, opts)
    failed = [int(k) for k in np.flatnonzero(~done)]
    if opts.mode == "lp":
        failed = []
        for k in range(X.shape[1]):
            try:
                S[:, k] = solve_column_lp(An, X[:, k], tol=opts.eq_tol)
                iters[k], done[k] = 0, True
            except (InfeasibleError, DataError, ConvergenceError):
                failed.append(k)
    reports = _reports(An, S, X, mu, iters, done)
    if opts.mode == "lp":
        for k in failed:
            reports[k].converged = False
    if len(failed) > _FAIL_FRACTION * X.shape[1]:
        raise ConvergenceError(
            f"{len(failed)} of {X.shape[1]} columns failed in {opts.mode} mode",
            result=L1Result(NonnegMatrix(S / norms[:, None]), reports, mu, norms, failed),
        )
    S_hat = NonnegMatrix(S / norms[:, None])
    return L1Result(S_hat, reports, mu, norms, failed)
