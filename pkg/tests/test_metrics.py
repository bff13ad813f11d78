import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degenbss import core, metrics, synth
from degenbss.errors import DataError, UsageError
from oracles import best_permutation_exhaustive


def _sources(rng, n=3, p=40):
    return rng.uniform(0, 1, (n, p))


def test_identical_inputs_are_perfect(rng):
    S = _sources(rng)
    rep = metrics.evaluate(S, S)
    assert rep.matched_perm == [0, 1, 2]
    assert np.allclose(rep.per_source_correlation, 1.0)
    assert np.allclose(rep.relative_error, 0.0, atol=1e-14)
    assert rep.negative_energy_ratio == 0.0


def test_swapped_rows_are_matched(rng):
    S = _sources(rng, n=2)
    perm, scales = metrics.match_sources(S[::-1], S)
    assert perm == [1, 0]
    assert np.allclose(scales, 1.0)


def test_exhaustive_equals_greedy_when_diagonally_dominant():
    rng = np.random.default_rng(3)
    for _ in range(50):
        C = rng.uniform(0, 0.3, (3, 3))
        perm = rng.permutation(3)
        C[np.arange(3), perm] = rng.uniform(0.8, 1.0, 3)
        assert metrics._greedy(C) == list(best_permutation_exhaustive(C))
        assert metrics._best_permutation(C) == list(perm)


def test_exhaustive_beats_greedy_on_adversarial_scores():
    C = np.array([[0.9, 0.8], [0.85, 0.1]])
    assert metrics._best_permutation(C, exhaustive=True) == [1, 0]
    assert metrics._best_permutation(C, exhaustive=False) == [0, 1]


def test_negative_energy_examples(rng):
    M = rng.uniform(0, 1, (2, 5))
    assert metrics.negative_energy_ratio(M) == 0.0
    assert metrics.negative_energy_ratio(-M) == 1.0
    assert metrics.negative_energy_ratio([[1.0, -1.0]]) == 0.5
    assert metrics.negative_energy_ratio(np.zeros((2, 2))) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e6), st.integers(0, 2**31))
def test_negative_energy_scale_invariant(c, seed):
    M = np.random.default_rng(seed).normal(size=(3, 10))
    assert metrics.negative_energy_ratio(c * M) == pytest.approx(metrics.negative_energy_ratio(M), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_match_sources_invariant_to_equivalence(seed):
    rng = np.random.default_rng(seed)
    S_true = _sources(rng, n=4, p=30)
    S_hat = S_true + 0.05 * rng.normal(size=S_true.shape)
    base = metrics.evaluate(S_hat, S_true)
    t = core.EquivalenceTransform.random(4, rng)
    _, S_moved = core.apply_equivalence(np.eye(4), S_hat, t)
    moved = metrics.evaluate(S_moved, S_true)
    assert np.max(np.abs(np.subtract(base.per_source_correlation, moved.per_source_correlation))) < 1e-12
    for k in range(4):
        a = S_moved[moved.matched_perm[k]] * moved.matched_scales[k]
        b = S_hat[base.matched_perm[k]] * base.matched_scales[k]
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_mixing_angle_examples():
    A = synth.REFERENCE_PCC_MATRIX
    assert metrics.mixing_angle_errors(A, A) == [0.0, 0.0]
    B = A.copy()
    B[:, 0] *= 10
    assert metrics.mixing_angle_errors(B, A) == [0.0, 0.0]
    yard = float(core.vector_angle(A[:, 0], A[:, 1]))
    assert 1e-8 < yard < 3e-8
    # swapped columns are matched back even though they differ by only ~2e-8 rad
    assert metrics.mixing_angle_errors(A[:, ::-1], A) == [0.0, 0.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_mixing_angles_invariant_to_column_scaling(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 1, (3, 3))
    Ah = A + 0.01 * rng.uniform(0, 1, (3, 3))
    d1, d2 = rng.uniform(0.1, 10, (2, 3))
    base = metrics.mixing_angle_errors(Ah, A)
    assert np.allclose(metrics.mixing_angle_errors(Ah * d1, A * d2), base, rtol=1e-9, atol=1e-15)


def test_metric_errors(rng):
    with pytest.raises(UsageError):
        metrics.evaluate(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(DataError):
        metrics.correlation_matrix(rng.uniform(size=(2, 3)), np.ones((2, 3)))
    with pytest.raises(DataError):
        metrics.mixing_angle_errors(np.array([[1.0, 0.0], [1.0, 0.0]]), np.eye(2))
