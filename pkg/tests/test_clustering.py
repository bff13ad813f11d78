import numpy as np
import pytest

from degenbss import synth
from degenbss.clustering import ClusterOptions, estimate_mixing_by_clustering, normalize_columns
from degenbss.core import vector_angle
from degenbss.errors import ClusteringError, DataError, UsageError
from degenbss.metrics import mixing_angle_errors


def _center_set_distance(C1, C2):
    """Max distance between matched centers (columns), matched greedily by nearest."""
    worst = 0.0
    for c in C1.T:
        worst = max(worst, np.min(np.linalg.norm(C2 - c[:, None], axis=0)))
    return worst


def test_separable_directions():
    X = np.hstack([np.outer([1.0, 0.0], [1, 2, 3]), np.outer([0.0, 1.0], [2, 4, 5])])
    res = estimate_mixing_by_clustering(X, ClusterOptions(2))
    assert _center_set_distance(res.centers, np.eye(2)) < 1e-15
    assert res.inertia == 0.0
    assert np.allclose(res.estimate.matrix.sum(axis=0), 1.0)


def test_ref_pcc_scenario_resolves_near_parallel_columns(ref_pcc_scenario):
    A = ref_pcc_scenario.A.data
    res = estimate_mixing_by_clustering(ref_pcc_scenario.X.data, ClusterOptions(2))
    half = 0.5 * float(vector_angle(A[:, 0], A[:, 1]))
    assert max(mixing_angle_errors(res.estimate, A)) < half


def test_ocdc3_at_60db(ocdc3_60db):
    res = estimate_mixing_by_clustering(ocdc3_60db.X.data, ClusterOptions(3))
    assert max(mixing_angle_errors(res.estimate, ocdc3_60db.A.data)) < 1e-3


def test_centers_are_unit_and_inertia_recomputable(ocdc3_60db):
    X = ocdc3_60db.X.data
    opts = ClusterOptions(3, restarts=4)
    res = estimate_mixing_by_clustering(X, opts)
    assert np.allclose(np.linalg.norm(res.centers, axis=0), 1.0, atol=1e-12)
    U, retained = normalize_columns(X, opts.norm_floor)
    assert np.array_equal(retained, res.retained)
    # each retained direction sits with its nearest center
    d2 = ((U[:, :, None] - res.centers[:, None, :]) ** 2).sum(axis=0)
    assert res.inertia == pytest.approx(d2.min(axis=1).sum(), rel=1e-9)


def test_normalize_columns_examples(ocdc3_60db):
    X = np.array([[3.0, 0.0, 5.0], [4.0, 5.0, 0.0]])
    U, kept = normalize_columns(X, 0.05)
    assert kept.tolist() == [0, 1, 2] and np.allclose(np.linalg.norm(U, axis=0), 1)
    _, kept = normalize_columns(np.array([[1.0, 0.0], [1.0, 0.0]]), 0.05)
    assert kept.tolist() == [0]
    Xn = ocdc3_60db.X.data
    norms = np.sqrt((Xn**2).sum(axis=0))
    count = sum(1 for v in norms if v >= 0.02 * norms.max())
    _, kept = normalize_columns(Xn, 0.02)
    assert kept.size == count < Xn.shape[1]
    with pytest.raises(DataError):
        normalize_columns(np.zeros((2, 3)), 0.02)


def test_error_paths():
    with pytest.raises(DataError):
        estimate_mixing_by_clustering(np.array([[1.0, 0.0], [0.0, 0.0]]), ClusterOptions(2))
    with pytest.raises(ClusteringError):
        estimate_mixing_by_clustering(np.outer([1.0, 2.0], [1, 2, 3, 4]), ClusterOptions(2))
    for bad in (dict(k=0), dict(k=2, restarts=0), dict(k=2, norm_floor=1.5)):
        with pytest.raises(UsageError):
            ClusterOptions(**bad)


def test_scale_invariance_of_directions(ocdc3_60db):
    X = ocdc3_60db.X.data
    _, kept = normalize_columns(X, 0.02)
    Xr = X[:, kept]
    c = np.random.default_rng(0).uniform(0.5, 2.0, Xr.shape[1])
    opts = ClusterOptions(3, restarts=6, norm_floor=1e-6, seed=11)
    a = estimate_mixing_by_clustering(Xr, opts)
    b = estimate_mixing_by_clustering(Xr * c, opts)
    assert np.max(np.abs(a.centers - b.centers)) < 1e-9


def test_permutation_covariance(ocdc3_60db):
    X = ocdc3_60db.X.data
    perm = np.random.default_rng(1).permutation(X.shape[1])
    opts = ClusterOptions(3, restarts=6, seed=5)
    a = estimate_mixing_by_clustering(X, opts)
    b = estimate_mixing_by_clustering(X[:, perm], opts)
    assert _center_set_distance(a.centers, b.centers) < 1e-9
    assert _center_set_distance(b.centers, a.centers) < 1e-9


def test_inertia_non_increasing_in_restarts():
    scen = synth.preset("ocdc3", snr_db=30, seed=2)
    prev = np.inf
    for r in (1, 2, 4, 8):
        res = estimate_mixing_by_clustering(scen.X.data, ClusterOptions(3, restarts=r, seed=9))
        assert res.inertia <= prev
        prev = res.inertia
        assert len(res.restart_inertias) <= r and res.inertia == min(res.restart_inertias)


def test_deterministic_given_seed(ocdc3_60db):
    a = estimate_mixing_by_clustering(ocdc3_60db.X.data, ClusterOptions(3, restarts=3, seed=4))
    b = estimate_mixing_by_clustering(ocdc3_60db.X.data, ClusterOptions(3, restarts=3, seed=4))
    assert np.array_equal(a.centers, b.centers)
