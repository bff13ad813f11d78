"""Convex-cone baseline: pick the data columns that span the smallest enclosing cone.

Each column ``X^k`` is scored by how far it lies from the cone spanned by the
other columns, ``min_{lam >= 0} |X_{-k} lam - X^k|_2``.  Columns that are
nonnegative combinations of the rest score zero; the ``n`` highest scorers,
deduplicated by angle, form the mixing estimate and the sources follow from
the Moore-Penrose inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import normalize_columns
from .core import MixingEstimate, unit_sum_columns, vector_angle
from .errors import SelectionError, SolverError, UsageError

__all__ = ["ColumnScore", "nnls", "score_columns", "select_extreme_columns", "recover_pseudo_inverse"]


@dataclass
class ColumnScore:
    """Residual of column ``col`` against the cone of the other columns.

    ``support`` holds column indices of ``X`` and ``weights`` the matching
    nonzero entries of the optimal ``lam``.
    """

    col: int
    score: float
    support: np.ndarray
    weights: np.ndarray


def nnls(M, b, tol: float = 1e-10, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Active-set (Lawson-Hanson) nonnegative least squares.

    Minimizes ``|M @ lam - b|_2`` subject to ``lam >= 0``.

    Parameters
    ----------
    M : array_like, shape (m, q)
    b : array_like, shape (m,)
    tol : float
        A coordinate enters the passive set only if its dual value exceeds
        ``tol * |M.T @ b|``.
    max_iter : int, optional
        Cap on outer iterations (default ``3 * q + 10``).

    Returns
    -------
    lam : ndarray, shape (q,)
    residual : float
    """
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if M.ndim != 2 or M.shape[1] < 1:
        raise UsageError("nnls needs a 2-D matrix with at least one column")
    if M.shape[0] != b.size:
        raise UsageError(f"M has {M.shape[0]} rows but b has {b.size} entries")
    q = M.shape[1]
    if max_iter is None:
        max_iter = 3 * q + 10
    x = np.zeros(q)
    passive = np.zeros(q, dtype=bool)
    scale = max(np.linalg.norm(M.T @ b), np.finfo(float).tiny)
    thresh = tol * scale
    w = M.T @ b
    blocked = np.zeros(q, dtype=bool)

    def solve(mask):
        z = np.zeros(q)
        idx = np.flatnonzero(mask)
        z[idx] = np.linalg.lstsq(M[:, idx], b, rcond=None)[0]
        return z

    for _ in range(max_iter):
        cand = ~passive & ~blocked & (w > thresh)
        if not cand.any():
            break
        j = int(np.flatnonzero(cand)[np.argmax(w[cand])])
        passive[j] = True
        z = solve(passive)
        if z[j] <= 0:
            # numerically dependent on the passive set; skip until progress elsewhere
            passive[j] = False
            blocked[j] = True
            continue
        blocked[:] = False
        while np.any(z[passive] <= 0):
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > 0
            x[~passive] = 0.0
            z = solve(passive)
        x = z
        w = M.T @ (b - M @ x)
    x[x < 0] = 0.0
    return x, float(np.linalg.norm(M @ x - b))


def score_columns(X, norm_floor: float = 0.02, tol: float = 1e-10) -> list[ColumnScore]:
    """Score every column against the others.

    Columns below ``norm_floor * max column norm`` are noise and are neither
    scored (they get 0) nor used as regressors.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise UsageError("score_columns needs a matrix with at least two columns")
    _, retained = normalize_columns(X, norm_floor)
    out = [ColumnScore(k, 0.0, np.empty(0, dtype=int), np.empty(0)) for k in range(X.shape[1])]
    if retained.size < 2:
        return out
    R = X[:, retained]
    for pos, k in enumerate(retained):
        others = np.delete(np.arange(retained.size), pos)
        lam, res = nnls(R[:, others], R[:, pos], tol=tol)
        nz = np.flatnonzero(lam)
        out[k] = ColumnScore(int(k), res, retained[others[nz]], lam[nz])
    return out


def select_extreme_columns(scores: list[ColumnScore], X, n: int, theta_min: float = 1e-6) -> MixingEstimate:
    """Greedy pick of the ``n`` highest scores, skipping near-duplicate directions."""
    X = np.asarray(X, dtype=float)
    if n > len(scores):
        raise UsageError(f"asked for {n} columns out of {len(scores)} scored")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i].score, scores[i].col))
    by_col = {sc.col: sc.score for sc in scores}
    picked: list[int] = []
    for i in order:
        col = scores[i].col
        x = X[:, col]
        if not np.any(x):
            continue
        if any(vector_angle(x, X[:, c]) < theta_min for c in picked):
            continue
        picked.append(col)
        if len(picked) == n:
            break
    if len(picked) < n:
        raise SelectionError(f"only {len(picked)} angularly distinct candidates (theta_min={theta_min:g}), need {n}")
    return MixingEstimate(
        unit_sum_columns(X[:, picked]),
        provenance="cone",
        notes={"columns": picked, "scores": [float(by_col[c]) for c in picked]},
    )


def recover_pseudo_inverse(A_hat, X, rtol: float = 1e-12) -> np.ndarray:
    """``pinv(A_hat) @ X`` via the SVD; raises if ``A_hat`` is rank deficient at ``rtol``."""
    if isinstance(A_hat, MixingEstimate):
        A_hat = A_hat.matrix
    A_hat = np.asarray(A_hat, dtype=float)
    X = np.asarray(X, dtype=float)
    if A_hat.shape[0] != X.shape[0]:
        raise UsageError(f"A_hat has {A_hat.shape[0]} rows, X has {X.shape[0]}")
    U, sv, Vt = np.linalg.svd(A_hat, full_matrices=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if sv.size < A_hat.shape[1] or sv[-1] <= rtol * sv[0]:
        raise SolverError(f"mixing estimate is rank deficient (condition number {cond:.3g})", condition_number=cond)
    return Vt.T @ ((U.T @ X) / sv[:, None])
