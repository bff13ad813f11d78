"""Synthetic ground truth: dominant-interval sources, near-singular mixing, noisy mixtures.

Randomness comes from numpy's counter-based ``Philox`` bit generator seeded
through ``SeedSequence(seed, spawn_key=(stream,))``, one stream per purpose
(layout, sources, mixing, noise).  Scenarios are persisted as CSV, so stored
fixtures rather than the generator are the cross-platform reference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .core import NonnegMatrix, condition_number
from .errors import GenerationError, UsageError
from .io import read_json, read_matrix_csv, write_json, write_matrix_csv

__all__ = [
    "PeakSpec",
    "DISourceSpec",
    "MixingSpec",
    "Scenario",
    "render_peak",
    "dominance_ratios",
    "gen_sources",
    "gen_mixing",
    "make_scenario",
    "measured_snr_db",
    "preset",
    "PRESETS",
]

# near-parallel 2x2 mixing matrix used as the degenerate reference case (cond ~1e8)
REFERENCE_PCC_MATRIX = np.array(
    [
        [0.894427190999916, 0.894427182055644],
        [0.447213595499958, 0.447213613388501],
    ]
)

_STREAM_LAYOUT, _STREAM_SOURCES, _STREAM_MIXING, _STREAM_NOISE = range(4)
_MAX_RETRIES = 20


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class PeakSpec:
    """One spectral line; ``center`` is a 0-based sample position."""

    center: float
    width: float
    height: float
    shape: str = "lorentzian"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise UsageError(f"peak width and height must be positive: {self}")
        if self.shape not in ("lorentzian", "gaussian"):
            raise UsageError(f"unknown peak shape {self.shape!r}")


def render_peak(peak: PeakSpec, p: int) -> np.ndarray:
    """Evaluate a peak on the sample grid ``0..p-1``.

    Lorentzian: ``h / (1 + ((t - c) / w)**2)`` (``w`` is the half width at
    half maximum).  Gaussian: ``h * exp(-((t - c) / w)**2 / 2)``.
    """
    t = np.arange(p, dtype=float)
    z = (t - peak.center) / peak.width
    if peak.shape == "lorentzian":
        return peak.height / (1.0 + z * z)
    return peak.height * np.exp(-0.5 * z * z)


@dataclass
class DISourceSpec:
    """Peak layout of ``n`` sources plus the index sets where each must dominate.

    ``standalone`` additionally zeroes every other source at the first peak
    centre of each source, which produces strict stand-alone peaks.
    """

    n: int
    p: int
    peaks: list[list[PeakSpec]]
    dominant_intervals: list[np.ndarray]
    dominance_ratio: float = 100.0
    standalone: bool = False

    def __post_init__(self):
        if self.n < 1 or self.p < self.n:
            raise UsageError(f"need 1 <= n <= p, got n={self.n}, p={self.p}")
        if len(self.peaks) != self.n or len(self.dominant_intervals) != self.n:
            raise UsageError("peaks and dominant_intervals need one entry per source")
        if self.dominance_ratio <= 1:
            raise UsageError("dominance_ratio must exceed 1")
        self.dominant_intervals = [np.unique(np.asarray(I, dtype=int)) for I in self.dominant_intervals]
        seen = set()
        for k, I in enumerate(self.dominant_intervals):
            if I.size == 0:
                raise UsageError(f"dominant interval of source {k} is empty")
            if I.min() < 0 or I.max() >= self.p:
                raise UsageError(f"dominant interval of source {k} leaves 0..{self.p - 1}")
            if seen.intersection(I.tolist()):
                raise UsageError("dominant intervals must be pairwise disjoint")
            seen.update(I.tolist())
        for k, row in enumerate(self.peaks):
            if not row:
                raise UsageError(f"source {k} has no peaks")
            for pk in row:
                if not 0 <= pk.center <= self.p - 1:
                    raise UsageError(f"peak centre {pk.center} outside 0..{self.p - 1}")

    @classmethod
    def banded(
        cls,
        n: int,
        p: int,
        *,
        peaks_per_source: int = 3,
        width: float = 1.5,
        band_fraction: float = 0.1,
        dominance_ratio: float = 100.0,
        shape: str = "lorentzian",
        standalone: bool = False,
        seed: int = 0,
    ) -> "DISourceSpec":
        """Each source owns one band of ``band_fraction * p`` samples.

        Bands are centred at ``(k + 1/2) * p / n``; peak positions, heights
        and widths inside a band are drawn from ``seed``.  The dominant
        interval of a source is every sample within one width of one of its
        peak centres.
        """
        rng = _rng(seed, _STREAM_LAYOUT)
        half = min(0.5 * band_fraction * p, 0.45 * p / n)
        peaks, intervals = [], []
        for k in range(n):
            mid = (k + 0.5) * p / n
            if peaks_per_source == 1:
                centers = np.array([mid])
            else:
                centers = np.linspace(mid - half, mid + half, peaks_per_source)
                centers = centers + rng.uniform(-0.1, 0.1, peaks_per_source) * (2 * half / peaks_per_source)
            centers = np.clip(np.round(centers), 0, p - 1)
            heights = np.sort(rng.uniform(0.3, 1.0, peaks_per_source))[::-1]
            heights[0] = 1.0
            widths = width * rng.uniform(0.8, 1.25, peaks_per_source)
            row = [PeakSpec(float(c), float(w), float(h), shape) for c, w, h in zip(centers, widths, heights)]
            peaks.append(row)
            idx = np.concatenate(
                [np.arange(int(np.ceil(c - w)), int(np.floor(c + w)) + 1) for c, w in zip(centers, widths)]
            )
            intervals.append(idx[(idx >= 0) & (idx < p)])
        return cls(n, p, peaks, intervals, dominance_ratio, standalone)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "dominance_ratio": self.dominance_ratio,
            "standalone": self.standalone,
            "peaks": [[asdict(pk) for pk in row] for row in self.peaks],
            "dominant_intervals": [I.tolist() for I in self.dominant_intervals],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DISourceSpec":
        return cls(
            n=d["n"],
            p=d["p"],
            peaks=[[PeakSpec(**pk) for pk in row] for row in d["peaks"]],
            dominant_intervals=[np.asarray(I, dtype=int) for I in d["dominant_intervals"]],
            dominance_ratio=d["dominance_ratio"],
            standalone=d.get("standalone", False),
        )


@dataclass
class MixingSpec:
    """Recipe for a nonnegative ``n x n`` mixing matrix.

    ``pcc``: nearly parallel columns hitting ``target_condition_number``.
    ``ocdc``: the last column is ``sum(w_j * col_j)`` over the others, plus
    an optional nonnegative perturbation of relative size ``perturbation``.
    ``generic``: random, well conditioned.
    """

    kind: str
    n: int
    target_condition_number: float | None = None
    combination_weights: Sequence[float] | None = None
    perturbation: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pcc", "ocdc", "generic"):
            raise UsageError(f"unknown mixing kind {self.kind!r}")
        if self.n < 2:
            raise UsageError("mixing matrices need n >= 2")
        if self.kind == "pcc":
            if self.target_condition_number is None or not self.target_condition_number >= 1:
                raise UsageError(f"pcc target condition number must be >= 1, got {self.target_condition_number}")
        if self.kind == "ocdc":
            w = self.combination_weights
            if w is None:
                w = [1.0 / (self.n - 1)] * (self.n - 1)
            w = [float(x) for x in w]
            if len(w) != self.n - 1 or min(w) < 0 or sum(w) <= 0:
                raise UsageError(f"ocdc needs {self.n - 1} nonnegative weights, not all zero")
            self.combination_weights = w
            if not 0 <= self.perturbation <= 1e-6:
                raise UsageError("ocdc perturbation must lie in [0, 1e-6]")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["combination_weights"] is not None:
            d["combination_weights"] = list(d["combination_weights"])
        return d


@dataclass
class Scenario:
    """Ground-truth triple plus the noisy observation."""

    A: NonnegMatrix
    S: NonnegMatrix
    X_clean: NonnegMatrix
    X: NonnegMatrix
    snr_db: float | None
    seed: int
    measured_snr_db: float | None = None
    meta: dict = field(default_factory=dict)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(directory / "A.csv", self.A.data)
        write_matrix_csv(directory / "S.csv", self.S.data)
        write_matrix_csv(directory / "X.csv", self.X.data)
        meta = dict(self.meta)
        meta.update(seed=self.seed, snr_db=self.snr_db, measured_snr_db=self.measured_snr_db)
        write_json(directory / "meta.json", meta)
        return directory

    @classmethod
    def load(cls, directory) -> "Scenario":
        directory = Path(directory)
        A = read_matrix_csv(directory / "A.csv")
        S = read_matrix_csv(directory / "S.csv")
        X = read_matrix_csv(directory / "X.csv")
        meta = read_json(directory / "meta.json")
        return cls(
            A=NonnegMatrix(A),
            S=NonnegMatrix(S),
            X_clean=NonnegMatrix(A @ S),
            X=NonnegMatrix(X),
            snr_db=meta.get("snr_db"),
            seed=meta.get("seed", 0),
            measured_snr_db=meta.get("measured_snr_db"),
            meta=meta,
        )


def dominance_ratios(S, intervals: Sequence[np.ndarray]) -> np.ndarray:
    """Worst ``s_kl / max_{j != k} s_jl`` over ``l`` in each source's interval."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    out = np.empty(n)
    for k, I in enumerate(intervals):
        own = S[k, I]
        others = np.delete(S, k, axis=0)[:, I]
        rival = others.max(axis=0) if n > 1 else np.zeros_like(own)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(rival > 0, own / rival, np.where(own > 0, np.inf, 0.0))
        out[k] = r.min()
    return out


def _render_sources(spec: DISourceSpec, peaks: list[list[PeakSpec]]) -> np.ndarray:
    S = np.zeros((spec.n, spec.p))
    for k, row in enumerate(peaks):
        for pk in row:
            S[k] += render_peak(pk, spec.p)
    if spec.standalone:
        for k, row in enumerate(peaks):
            col = int(round(row[0].center))
            keep = S[k, col]
            S[:, col] = 0.0
            S[k, col] = keep
    return S


def _jitter(peaks: list[list[PeakSpec]], rng: np.random.Generator, p: int) -> list[list[PeakSpec]]:
    out = []
    for row in peaks:
        new_row = []
        for pk in row:
            c = float(np.clip(pk.center + rng.uniform(-0.25, 0.25) * pk.width, 0, p - 1))
            w = pk.width * float(np.exp(rng.uniform(-0.1, 0.1)))
            h = pk.height * float(np.exp(rng.uniform(-0.1, 0.1)))
            new_row.append(PeakSpec(c, w, h, pk.shape))
        out.append(new_row)
    return out


def gen_sources(spec: DISourceSpec, seed: int = 0) -> NonnegMatrix:
    """Render the sources and verify the dominance ratio on every interval.

    The first attempt uses the peaks as given; up to 20 retries jitter peak
    positions, widths and heights.  Raises :class:`GenerationError` with the
    worst observed ratio if none passes.
    """
    rng = _rng(seed, _STREAM_SOURCES)
    worst = -np.inf
    peaks = spec.peaks
    for attempt in range(_MAX_RETRIES + 1):
        if attempt:
            peaks = _jitter(spec.peaks, rng, spec.p)
        S = _render_sources(spec, peaks)
        ratio = float(dominance_ratios(S, spec.dominant_intervals).min()) if spec.n > 1 else np.inf
        if ratio >= spec.dominance_ratio:
            return NonnegMatrix(S)
        worst = max(worst, ratio)
    raise GenerationError(
        f"dominance check failed after {_MAX_RETRIES} retries: best worst-case ratio {worst:.4g} "
        f"< required {spec.dominance_ratio:.4g}",
        worst_ratio=worst,
    )


def _simplex_directions(u: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``n`` unit vectors orthogonal to ``u`` forming a centred regular simplex."""
    n = u.size
    # orthonormal basis of the complement of u
    Q, _ = np.linalg.qr(np.column_stack([u, np.eye(n)[:, : n - 1]]))
    basis = Q[:, 1:n]
    centered = np.eye(n) - 1.0 / n
    E, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
    coords = E[:, 1:n].T @ centered
    if n > 2:
        R, _ = np.linalg.qr(rng.standard_normal((n - 1, n - 1)))
        coords = R @ coords
    coords /= np.linalg.norm(coords, axis=0)
    return basis @ coords


def _pcc_matrix(n: int, target: float, rng: np.random.Generator) -> np.ndarray:
    if n == 2:
        u = np.array([2.0, 1.0]) / np.sqrt(5.0)
    else:
        u = rng.uniform(0.5, 1.0, n)
        u /= np.linalg.norm(u)
    V = _simplex_directions(u, rng)
    neg = V < 0
    delta_max = np.min(u[:, None].repeat(n, axis=1)[neg] / -V[neg]) if neg.any() else 1.0
    delta_hi = min(0.999 * delta_max, 1.0)

    def build(delta):
        return u[:, None] + delta * V

    if condition_number(build(delta_hi)) > target:
        raise UsageError(
            f"pcc target condition number {target:.3g} is below the smallest achievable "
            f"{condition_number(build(delta_hi)):.3g} for nonnegative columns"
        )
    lo, hi = np.log(1e-300), np.log(delta_hi)
    log_target = np.log(target)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = condition_number(build(np.exp(mid)))
        if not np.isfinite(c) or np.log(c) > log_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    return build(np.exp(hi))


def gen_mixing(spec: MixingSpec, seed: int = 0) -> NonnegMatrix:
    """Build the mixing matrix described by ``spec``."""
    rng = _rng(seed, _STREAM_MIXING)
    n = spec.n
    if spec.kind == "pcc":
        A = _pcc_matrix(n, float(spec.target_condition_number), rng)
    elif spec.kind == "ocdc":
        base = np.eye(n)[:, : n - 1] + rng.uniform(0.0, 0.3, (n, n - 1))
        base /= np.linalg.norm(base, axis=0)
        last = base @ np.asarray(spec.combination_weights, dtype=float)
        if spec.perturbation > 0:
            d = np.abs(rng.standard_normal(n))
            last = last + spec.perturbation * np.linalg.norm(last) * d / np.linalg.norm(d)
        A = np.column_stack([base, last])
    else:
        A = rng.uniform(0.0, 1.0, (n, n)) + n * np.eye(n)
        A /= np.linalg.norm(A, axis=0)
    return NonnegMatrix(np.clip(A, 0.0, None))


def measured_snr_db(X_clean, X) -> float:
    X_clean = np.asarray(X_clean, dtype=float)
    err = np.sum((np.asarray(X, dtype=float) - X_clean) ** 2)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(np.sum(X_clean**2) / err))


def _add_calibrated_noise(Xc: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise clamped at zero, scaled so the post-clamp SNR is exact.

    Clamping removes part of the noise energy wherever the clean signal sits
    near zero, so the scale is found by a 1-D root solve on the measured SNR.
    """
    Z = rng.standard_normal(Xc.shape)
    target = np.sum(Xc**2) / 10.0 ** (snr_db / 10.0)

    def excess(log_c):
        c = np.exp(log_c)
        return np.log(np.sum((np.maximum(Xc + c * Z, 0.0) - Xc) ** 2)) - np.log(target)

    lo = 0.5 * np.log(target / np.sum(Z**2))
    hi = lo + 0.5
    while excess(hi) < 0:
        hi += 0.5
    while excess(lo) > 0:
        lo -= 0.5
    c = np.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14))
    return np.maximum(Xc + c * Z, 0.0)


def make_scenario(src: DISourceSpec, mixing, snr_db: float | None = None, seed: int = 0) -> Scenario:
    """Generate ``(A, S, X)``.

    ``mixing`` is a :class:`MixingSpec` or an explicit nonnegative matrix.
    """
    S = gen_sources(src, seed)
    if isinstance(mixing, MixingSpec):
        A = gen_mixing(mixing, seed)
        mix_meta = mixing.to_dict()
    else:
        A = NonnegMatrix(mixing)
        mix_meta = {"kind": "explicit"}
    if A.cols != S.rows:
        raise UsageError(f"mixing matrix has {A.cols} columns but there are {S.rows} sources")
    Xc = A.data @ S.data
    if snr_db is None:
        X = Xc.copy()
        measured = None
    else:
        X = _add_calibrated_noise(Xc, float(snr_db), _rng(seed, _STREAM_NOISE))
        measured = measured_snr_db(Xc, X)
    meta = {
        "sources": src.to_dict(),
        "mixing": mix_meta,
        "condition_number": condition_number(A.data),
    }
    return Scenario(
        A=A,
        S=S,
        X_clean=NonnegMatrix(Xc),
        X=NonnegMatrix(X),
        snr_db=None if snr_db is None else float(snr_db),
        seed=int(seed),
        measured_snr_db=measured,
        meta=meta,
    )


def _preset_pcc2(seed):
    return DISourceSpec.banded(2, 2000, seed=seed), MixingSpec("pcc", 2, target_condition_number=1.25e8)


def _preset_ocdc3(seed):
    return DISourceSpec.banded(3, 2000, seed=seed), MixingSpec("ocdc", 3, combination_weights=(0.5, 0.5))


def _preset_nna3(seed):
    return DISourceSpec.banded(3, 2000, standalone=True, seed=seed), MixingSpec("generic", 3)


PRESETS = {"pcc2": _preset_pcc2, "ocdc3": _preset_ocdc3, "nna3": _preset_nna3}


def preset(name: str, snr_db: float | None = None, seed: int = 0) -> Scenario:
    """Named scenarios: ``pcc2`` (2x2 near-parallel columns, cond 1.25e8),
    ``ocdc3`` (3x3, third column the mean of the other two) and ``nna3``
    (3x3 generic mixing of sources with stand-alone peaks)."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    src, mixing = factory(seed)
    scen = make_scenario(src, mixing, snr_db=snr_db, seed=seed)
    scen.meta["preset"] = name
    return scen
