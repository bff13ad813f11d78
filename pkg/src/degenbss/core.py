"""Linear mixing model ``X = A @ S`` and the containers shared by all modules.

Rows of ``X`` and ``S`` are signals (mixtures and sources), columns are
acquisition samples.  ``A`` is the ``m x n`` mixing matrix.  Any pair
``(A @ P @ L, inv(L) @ inv(P) @ S)`` with ``P`` a permutation and ``L`` a
positive diagonal reproduces the same ``X``; :class:`EquivalenceTransform`
represents that pair ``(P, L)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import UsageError

__all__ = [
    "NonnegMatrix",
    "ModelDims",
    "EquivalenceTransform",
    "MixingEstimate",
    "SolverReport",
    "mix",
    "apply_equivalence",
    "condition_number",
    "vector_angle",
    "unit_sum_columns",
]


class NonnegMatrix:
    """Immutable dense matrix tagged ``strictly-nonneg`` or ``signed``.

    The nonnegativity check runs once, at construction.  Recovered source
    estimates that may carry negative entries are built with ``signed=True``.
    The object supports ``np.asarray`` and returns a read-only view.
    """

    __slots__ = ("_data", "_signed")

    def __init__(self, data, signed: bool = False):
        arr = np.array(data, dtype=float)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise UsageError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise UsageError("matrix contains non-finite entries")
        if not signed and np.any(arr < 0):
            raise UsageError(
                f"matrix tagged strictly-nonneg has negative entries (min {arr.min():.3g})"
            )
        arr.setflags(write=False)
        self._data = arr
        self._signed = bool(signed)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def signed(self) -> bool:
        return self._signed

    @property
    def tag(self) -> str:
        return "signed" if self._signed else "strictly-nonneg"

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self) -> str:
        return f"NonnegMatrix({self.rows}x{self.cols}, {self.tag})"


@dataclass(frozen=True)
class ModelDims:
    """Problem sizes: ``m`` mixtures, ``n`` sources, ``p`` samples."""

    m: int
    n: int
    p: int

    def __post_init__(self):
        if self.m != self.n:
            raise UsageError(f"only the determined case m == n is supported (m={self.m}, n={self.n})")
        if self.n < 1 or self.p < self.n:
            raise UsageError(f"need n >= 1 and p >= n, got n={self.n}, p={self.p}")

    @classmethod
    def of(cls, X) -> "ModelDims":
        m, p = np.shape(X)
        return cls(m=m, n=m, p=p)


@dataclass(frozen=True)
class EquivalenceTransform:
    """Permutation and positive scaling ``(P, L)``.

    ``perm[k]`` is the original source index placed at position ``k``, so
    ``(A @ P)[:, k] == A[:, perm[k]]``.
    """

    perm: tuple[int, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        perm = tuple(int(i) for i in self.perm)
        scales = tuple(float(s) for s in self.scales)
        if sorted(perm) != list(range(len(perm))):
            raise UsageError(f"perm {perm} is not a bijection of 0..{len(perm) - 1}")
        if len(scales) != len(perm):
            raise UsageError("perm and scales differ in length")
        if any(not (s > 0 and np.isfinite(s)) for s in scales):
            raise UsageError(f"scales must be finite and strictly positive, got {scales}")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def identity(cls, n: int) -> "EquivalenceTransform":
        return cls(tuple(range(n)), (1.0,) * n)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, low=0.1, high=10.0) -> "EquivalenceTransform":
        perm = tuple(int(i) for i in rng.permutation(n))
        scales = tuple(float(s) for s in np.exp(rng.uniform(np.log(low), np.log(high), n)))
        return cls(perm, scales)

    def permutation_matrix(self) -> np.ndarray:
        n = len(self.perm)
        P = np.zeros((n, n))
        P[list(self.perm), np.arange(n)] = 1.0
        return P


@dataclass
class MixingEstimate:
    """Candidate mixing matrix with its provenance and conditioning."""

    matrix: np.ndarray
    provenance: str  # "clustering" | "cone" | "refined" | "truth"
    condition_number: float = float("nan")
    notes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise UsageError("mixing matrix must be 2-D")
        if np.isnan(self.condition_number) and self.matrix.shape[0] == self.matrix.shape[1]:
            self.condition_number = condition_number(self.matrix)

    def to_dict(self) -> dict[str, Any]:
        return {
            "provenance": self.provenance,
            "condition_number": self.condition_number,
            "shape": list(self.matrix.shape),
            **self.notes,
        }


@dataclass
class SolverReport:
    """Convergence record of one solve."""

    iterations: int
    objective: float
    feasibility: float
    stationarity: float
    complementarity: float = 0.0
    converged: bool = True
    objective_history: list[float] = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "iterations": int(self.iterations),
            "objective": float(self.objective),
            "feasibility": float(self.feasibility),
            "stationarity": float(self.stationarity),
            "complementarity": float(self.complementarity),
            "converged": bool(self.converged),
            "message": self.message,
        }


def _as_matrix(M, name: str) -> np.ndarray:
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2:
        raise UsageError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


def mix(A, S) -> NonnegMatrix:
    """Return ``X = A @ S`` tagged strictly-nonneg."""
    A = NonnegMatrix(A) if not isinstance(A, NonnegMatrix) else A
    S = NonnegMatrix(S) if not isinstance(S, NonnegMatrix) else S
    if A.signed or S.signed:
        raise UsageError("mix requires strictly-nonneg A and S")
    if A.cols != S.rows:
        raise UsageError(f"inner dimensions disagree: A is {A.shape}, S is {S.shape}")
    return NonnegMatrix(A.data @ S.data)


def apply_equivalence(A, S, t: EquivalenceTransform) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A @ P @ L, inv(L) @ inv(P) @ S)``."""
    A = _as_matrix(A, "A")
    S = _as_matrix(S, "S")
    n = len(t.perm)
    if A.shape[1] != n or S.shape[0] != n:
        raise UsageError(f"transform of size {n} does not fit A {A.shape} and S {S.shape}")
    perm = list(t.perm)
    scales = np.asarray(t.scales)
    return A[:, perm] * scales, S[perm, :] / scales[:, None]


def condition_number(A) -> float:
    """Ratio of extreme singular values; ``inf`` for an exactly singular matrix."""
    A = _as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise UsageError(f"condition number needs a square matrix, got {A.shape}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def vector_angle(u, v, axis: int = 0) -> np.ndarray | float:
    """Angle between ``u`` and ``v`` along ``axis``.

    Uses ``2 * atan2(|u' - v'|, |u' + v'|)`` on the normalized vectors, which
    keeps full relative accuracy for angles far below ``sqrt(eps)``; the
    textbook ``arccos`` of the cosine bottoms out near 2e-8 rad.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u, axis=axis, keepdims=True)
    nv = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(nu == 0) or np.any(nv == 0):
        raise UsageError("angle to a zero vector is undefined")
    u = u / nu
    v = v / nv
    ang = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=axis), np.linalg.norm(u + v, axis=axis))
    return float(ang) if np.ndim(ang) == 0 else ang


def unit_sum_columns(M) -> np.ndarray:
    """Rescale each column to sum to one (sign-preserving for positive sums)."""
    M = _as_matrix(M, "M")
    sums = M.sum(axis=0)
    if np.any(sums <= 0):
        raise UsageError("column with nonpositive sum cannot be rescaled to unit sum")
    return M / sums
