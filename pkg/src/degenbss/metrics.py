"""Recovery quality modulo permutation and positive scaling."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .core import MixingEstimate, vector_angle
from .errors import DataError, UsageError

__all__ = [
    "EvalReport",
    "correlation_matrix",
    "match_sources",
    "negative_energy_ratio",
    "mixing_angle_errors",
    "evaluate",
]

EXHAUSTIVE_MAX_N = 8
_MIN_SCALE = np.finfo(float).tiny


@dataclass
class EvalReport:
    matched_perm: list[int]
    matched_scales: list[float]
    per_source_correlation: list[float]
    relative_error: list[float]
    negative_energy_ratio: float
    mixing_angle_errors: list[float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def correlation_matrix(S_hat, S_true) -> np.ndarray:
    """``C[k, j]`` = Pearson correlation of true row ``k`` with estimated row ``j``."""
    S_hat = np.asarray(S_hat, dtype=float)
    S_true = np.asarray(S_true, dtype=float)
    if S_hat.shape != S_true.shape or S_hat.ndim != 2:
        raise UsageError(f"shape mismatch: {S_hat.shape} vs {S_true.shape}")
    T = S_true - S_true.mean(axis=1, keepdims=True)
    H = S_hat - S_hat.mean(axis=1, keepdims=True)
    tn = np.linalg.norm(T, axis=1)
    if np.any(tn == 0):
        raise DataError("a true source row is constant; correlation is undefined")
    hn = np.linalg.norm(H, axis=1)
    hn[hn == 0] = np.inf  # a constant estimate correlates with nothing
    return (T @ H.T) / np.outer(tn, hn)


def _greedy(score: np.ndarray) -> list[int]:
    n = score.shape[0]
    perm = [-1] * n
    S = score.copy()
    for _ in range(n):
        k, j = np.unravel_index(np.argmax(S), S.shape)
        perm[k] = int(j)
        S[k, :] = -np.inf
        S[:, j] = -np.inf
    return perm


def _best_permutation(score: np.ndarray, exhaustive: bool | None = None) -> list[int]:
    n = score.shape[0]
    if exhaustive is None:
        exhaustive = n <= EXHAUSTIVE_MAX_N
    if not exhaustive:
        return _greedy(score)
    best, best_val = None, -np.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        val = score[rows, perm].sum()
        if val > best_val:
            best, best_val = perm, val
    return list(best)


def match_sources(S_hat, S_true, exhaustive: bool | None = None) -> tuple[list[int], list[float]]:
    """Match estimated rows to true rows.

    ``perm[k]`` is the row of ``S_hat`` assigned to true source ``k``; the
    permutation maximizes the summed absolute correlation (exhaustively for
    ``n <= 8``, greedily otherwise).  ``scales[k]`` is the least-squares
    factor taking ``S_hat[perm[k]]`` onto ``S_true[k]``, clamped positive.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    S_true = np.asarray(S_true, dtype=float)
    C = correlation_matrix(S_hat, S_true)
    perm = _best_permutation(np.abs(C), exhaustive)
    scales = []
    for k, j in enumerate(perm):
        h = S_hat[j]
        hh = h @ h
        c = (h @ S_true[k]) / hh if hh > 0 else 0.0
        scales.append(float(max(c, _MIN_SCALE)))
    return perm, scales


def negative_energy_ratio(S_hat) -> float:
    """Share of squared mass sitting in negative entries; 0 for an all-zero matrix."""
    S_hat = np.asarray(S_hat, dtype=float)
    total = np.sum(S_hat * S_hat)
    if total == 0:
        return 0.0
    neg = np.minimum(S_hat, 0.0)
    return float(np.sum(neg * neg) / total)


def mixing_angle_errors(A_hat, A_true, perm=None) -> list[float]:
    """Angle between matched columns; columns of ``A_hat`` are taken in ``perm`` order.

    Without ``perm`` the columns are matched by minimizing the summed angle.
    Cosines cannot separate directions closer than about 1e-8 rad, so the
    matching works on angles directly.
    """
    if isinstance(A_hat, MixingEstimate):
        A_hat = A_hat.matrix
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    if A_hat.shape != A_true.shape:
        raise UsageError(f"shape mismatch: {A_hat.shape} vs {A_true.shape}")
    if np.any(np.linalg.norm(A_hat, axis=0) == 0) or np.any(np.linalg.norm(A_true, axis=0) == 0):
        raise DataError("zero column in a mixing matrix")
    if perm is None:
        n = A_true.shape[1]
        ang = np.array([[float(vector_angle(A_hat[:, j], A_true[:, k])) for j in range(n)] for k in range(n)])
        perm = _best_permutation(-ang)
    return [float(a) for a in vector_angle(A_hat[:, list(perm)], A_true, axis=0)]


def evaluate(S_hat, S_true, A_hat=None, A_true=None) -> EvalReport:
    perm, scales = match_sources(S_hat, S_true)
    S_hat = np.asarray(S_hat, dtype=float)
    S_true = np.asarray(S_true, dtype=float)
    matched = S_hat[perm] * np.asarray(scales)[:, None]
    C = correlation_matrix(matched, S_true)
    corr = [float(c) for c in np.diag(C)]
    rel = [float(np.linalg.norm(matched[k] - S_true[k]) / np.linalg.norm(S_true[k])) for k in range(len(perm))]
    angles = None
    if A_hat is not None and A_true is not None:
        angles = mixing_angle_errors(A_hat, A_true, perm)
    return EvalReport(
        matched_perm=list(perm),
        matched_scales=scales,
        per_source_correlation=corr,
        relative_error=rel,
        negative_energy_ratio=negative_energy_ratio(S_hat),
        mixing_angle_errors=angles,
    )
