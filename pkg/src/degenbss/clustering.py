"""Mixing-matrix estimation from the direction clusters of the data columns.

Where source ``i`` dominates, a data column is ``X^k = s_ik A^i + small terms``,
so its direction sits close to ``A^i``.  Normalizing the columns to the unit
sphere and running k-means therefore places one center near each mixing
column.

Distances are always formed as ``sum((x - c)**2)``.  The expanded form
``|x|^2 + |c|^2 - 2 x.c`` cancels catastrophically when directions differ by
1e-8 rad, which is exactly the regime of nearly parallel mixing columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MixingEstimate, unit_sum_columns
from .errors import ClusteringError, DataError, UsageError

__all__ = ["ClusterOptions", "ClusterResult", "normalize_columns", "estimate_mixing_by_clustering"]


@dataclass(frozen=True)
class ClusterOptions:
    k: int
    restarts: int = 16
    max_iters: int = 300
    norm_floor: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.restarts < 1 or self.max_iters < 1:
            raise UsageError("restarts and max_iters must be >= 1")
        if not 0 < self.norm_floor < 1:
            raise UsageError("norm_floor must lie in (0, 1)")


@dataclass
class ClusterResult:
    centers: np.ndarray  # (m, k), unit columns
    assignments: np.ndarray  # cluster index per retained column
    retained: np.ndarray  # indices into the columns of X
    inertia: float
    estimate: MixingEstimate
    restart_inertias: list[float] = field(default_factory=list)


def normalize_columns(X, norm_floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Drop columns below ``norm_floor * max column norm``; scale the rest to unit norm.

    Returns the unit columns as an ``(m, r)`` array and their original indices.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise UsageError("X must be 2-D")
    norms = np.linalg.norm(X, axis=0)
    top = norms.max() if norms.size else 0.0
    if top == 0:
        raise DataError("every column of X is zero")
    retained = np.flatnonzero(norms >= norm_floor * top)
    if retained.size == 0:
        raise DataError("no column survives the norm floor")
    return X[:, retained] / norms[retained], retained


def _sq_dist(P: np.ndarray, C: np.ndarray) -> np.ndarray:
    D = np.empty((P.shape[0], C.shape[0]))
    for j, c in enumerate(C):
        diff = P - c
        D[:, j] = np.einsum("ij,ij->i", diff, diff)
    return D


def _kmeanspp(P: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    N = P.shape[0]
    idx = [int(rng.integers(N))]
    d2 = _sq_dist(P, P[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ClusteringError(f"fewer than {k} distinct column directions")
        nxt = int(rng.choice(N, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dist(P, P[[nxt]])[:, 0])
    return P[idx].copy()


def _lloyd(P: np.ndarray, C: np.ndarray, max_iters: int) -> tuple[np.ndarray, np.ndarray]:
    k = C.shape[0]
    labels = None
    for _ in range(max_iters):
        D = _sq_dist(P, C)
        new = np.argmin(D, axis=1)
        # repair empty clusters at the farthest retained point
        for j in range(k):
            if not np.any(new == j):
                far = int(np.argmax(D[np.arange(P.shape[0]), new]))
                new[far] = j
                D[far, :] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            C[j] = P[labels == j].mean(axis=0)
    return C, labels


def estimate_mixing_by_clustering(X, opts: ClusterOptions) -> ClusterResult:
    """k-means on unit column directions, best of ``opts.restarts`` runs.

    The retained columns are sorted lexicographically before seeding, so the
    result does not depend on the column order of ``X``.  Restart ``r`` draws
    from the ``r``-th child of ``SeedSequence(opts.seed)``; the lowest inertia
    wins with ties going to the earliest restart.  The returned mixing
    estimate has the unit centers rescaled to unit column sums.
    """
    X = np.asarray(X, dtype=float)
    U, retained = normalize_columns(X, opts.norm_floor)
    if retained.size < opts.k:
        raise DataError(f"only {retained.size} columns above the norm floor, need at least {opts.k}")
    order = np.lexsort(U[::-1])
    P = U[:, order].T
    if np.unique(P, axis=0).shape[0] < opts.k:
        raise ClusteringError(f"fewer than {opts.k} distinct column directions")

    children = np.random.SeedSequence(opts.seed).spawn(opts.restarts)
    best = None
    inertias = []
    for child in children:
        rng = np.random.Generator(np.random.Philox(child))
        C, labels = _lloyd(P, _kmeanspp(P, opts.k, rng), opts.max_iters)
        if np.bincount(labels, minlength=opts.k).min() == 0:
            continue
        C = C / np.linalg.norm(C, axis=1, keepdims=True)
        diff = P - C[labels]
        inertia = float(np.einsum("ij,ij->", diff, diff))
        inertias.append(inertia)
        if best is None or inertia < best[0]:
            best = (inertia, C, labels)
    if best is None:
        raise ClusteringError(f"every restart ended with an empty cluster (k={opts.k}, {P.shape[0]} points)")

    inertia, C, labels = best
    assignments = np.empty_like(labels)
    assignments[order] = labels
    centers = C.T.copy()
    estimate = MixingEstimate(
        unit_sum_columns(centers),
        provenance="clustering",
        notes={"retained_columns": int(retained.size), "inertia": inertia},
    )
    return ClusterResult(
        centers=centers,
        assignments=assignments,
        retained=retained,
        inertia=inertia,
        estimate=estimate,
        restart_inertias=inertias,
    )
