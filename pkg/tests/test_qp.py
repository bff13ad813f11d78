import itertools

import numpy as np
import pytest

from degenbss.clustering import ClusterOptions, estimate_mixing_by_clustering
from degenbss.cone import recover_pseudo_inverse
from degenbss.errors import ConvergenceError, SolverError, UsageError
from degenbss.metrics import negative_energy_ratio
from degenbss.qp import QpOptions, implied_mixing, kkt_residuals, qp_objective, refine_inverse
from degenbss import synth
from degenbss.core import unit_sum_columns
from oracles import qp_enumerate


def _not_above_start(res):
    # the report evaluates I - A_hat B directly; the start value is taken in
    # whitened coordinates, so allow for rounding between the two
    return res.report.objective <= res.start_objective * (1 + 1e-9) + 1e-15


def _independent_certificate(B, L, A, X):
    """KKT residuals recomputed entry by entry, without the library helper."""
    n, p = X.shape
    BX = np.zeros((n, p))
    for i in range(n):
        for l in range(p):
            BX[i, l] = sum(B[i, k] * X[k, l] for k in range(n))
    R = A @ B - np.eye(n)
    grad = A.T @ R
    for i in range(n):
        for l in range(p):
            grad[i] -= L[i, l] * X[:, l]
    scale = max(np.linalg.norm(b) for b in B)
    comp = sum(
        L[i, l] * abs(BX[i, l]) / (scale * np.linalg.norm(X[:, l])) for i in range(n) for l in range(p) if L[i, l] > 0
    )
    comp = comp / L.sum() if L.sum() > 0 else 0.0
    return {
        "feasibility": max(0.0, -BX.min()) / np.abs(BX).max(),
        "stationarity": np.linalg.norm(grad) / np.linalg.norm(A),
        "dual": L.min(),
        "complementarity": comp,
    }


@pytest.fixture(scope="module")
def ref_qp(ref_pcc_scenario):
    X = ref_pcc_scenario.X.data
    est = estimate_mixing_by_clustering(X, ClusterOptions(2)).estimate
    return est, refine_inverse(est, X)


def test_identity_is_optimal(rng):
    X = rng.uniform(0, 1, (3, 20))
    res = refine_inverse(np.eye(3), X)
    assert res.report.objective < 1e-12
    assert np.allclose(res.B, np.eye(3))


def test_feasible_unconstrained_optimum(rng):
    A = rng.uniform(0, 1, (3, 3)) + 3 * np.eye(3)
    X = A @ rng.uniform(0.1, 1, (3, 30))
    res = refine_inverse(A, X)
    assert res.report.objective < 1e-10
    assert np.allclose(res.B, np.linalg.inv(A), atol=1e-10)


def test_ref_pcc_scenario_suppresses_negative_peaks(ref_pcc_scenario, ref_qp):
    est, res = ref_qp
    X = ref_pcc_scenario.X.data
    before = negative_energy_ratio(recover_pseudo_inverse(est, X))
    after = negative_energy_ratio(res.S_hat)
    assert before > 0
    assert after * 10 <= before
    assert res.report.converged


def test_ref_pcc_scenario_refined_mixing_is_closer(ref_pcc_scenario, ref_qp):
    est, res = ref_qp
    A = ref_pcc_scenario.A.data
    Ap = implied_mixing(res, est.matrix)
    ref = unit_sum_columns(A)

    def err(M):
        # best column order first: the two columns are only ~2e-8 rad apart
        M = unit_sum_columns(M)
        return min(np.max(np.abs(M[:, list(pm)] - ref) / ref) for pm in itertools.permutations(range(2)))

    assert err(Ap.matrix) < err(est.matrix)
    assert Ap.provenance == "refined"


def test_certificates_on_converged_solves(ref_pcc_scenario, ref_qp):
    cases = [(ref_qp[0].matrix, ref_pcc_scenario.X.data, ref_qp[1])]
    for seed in range(4):
        scen = synth.preset("ocdc3", snr_db=60, seed=seed)
        est = estimate_mixing_by_clustering(scen.X.data, ClusterOptions(3, seed=seed)).estimate
        cases.append((est.matrix, scen.X.data, refine_inverse(est, scen.X.data)))
    opts = QpOptions()
    for A, X, res in cases:
        rep = res.report
        assert rep.converged
        assert rep.feasibility <= opts.feas_tol
        assert np.min(res.B @ X) >= -opts.feas_tol * np.max(np.abs(res.B @ X))
        hist = rep.objective_history
        assert all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(hist, hist[1:]))
        assert _not_above_start(res)
        lib = kkt_residuals(res.B, res.multipliers, A, X)
        assert lib["stationarity"] <= opts.stat_tol
        assert lib["complementarity"] <= opts.stat_tol
        assert lib["dual_feasibility"] == 0.0
        own = _independent_certificate(res.B, res.multipliers, A, X)
        assert own["stationarity"] == pytest.approx(lib["stationarity"], rel=1e-6, abs=1e-14)
        assert own["complementarity"] == pytest.approx(lib["complementarity"], rel=1e-6, abs=1e-14)
        assert own["dual"] >= 0
        inactive = np.ones_like(res.multipliers, dtype=bool)
        for i, l in res.active:
            inactive[i, l] = False
        assert np.all(res.multipliers[inactive] == 0)


def test_oracle_equivalence_100_trials():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        p = int(rng.integers(1, 4))
        A = rng.uniform(0, 1, (2, 2)) + np.eye(2)
        X = A @ rng.uniform(0, 1, (2, p)) + 1e-3
        A_hat = A + rng.normal(0, 0.3, (2, 2))
        f_ref, _ = qp_enumerate(A_hat, X)
        res = refine_inverse(A_hat, X)
        worst = max(worst, abs(res.report.objective - f_ref))
        assert qp_objective(A_hat, res.B) == pytest.approx(res.report.objective, rel=1e-8, abs=1e-12)
    assert worst < 1e-6


def test_implied_mixing_examples(rng):
    assert np.allclose(implied_mixing(np.eye(3)).matrix, np.eye(3))
    A = rng.uniform(0, 1, (3, 3)) + 2 * np.eye(3)
    X = rng.uniform(0, 1, (3, 40))
    res = refine_inverse(A, X)
    Ap = implied_mixing(res, A).matrix
    back = np.linalg.inv(Ap)
    # implied_mixing fixes a column scaling, so the inverse matches B row by row up to scale
    unit = lambda M: M / np.linalg.norm(M, axis=1, keepdims=True)
    assert np.max(np.abs(unit(back) - unit(res.B))) < 1e-8


def test_singular_inputs_raise(rng):
    with pytest.raises(SolverError) as exc:
        implied_mixing(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert exc.value.condition_number is not None
    with pytest.raises(SolverError):
        refine_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]), rng.uniform(0, 1, (2, 5)))
    with pytest.raises(UsageError):
        refine_inverse(np.ones((2, 3)), np.ones((2, 5)))


def test_iteration_cap_raises_with_best_iterate(ref_pcc_scenario, ref_qp):
    est, full = ref_qp
    with pytest.raises(ConvergenceError) as exc:
        refine_inverse(est, ref_pcc_scenario.X.data, QpOptions(max_iters=1))
    res = exc.value.result
    assert res is not None and not res.report.converged
    assert _not_above_start(res)
    assert np.min(res.B @ ref_pcc_scenario.X.data) >= -1e-9 * np.max(np.abs(res.B @ ref_pcc_scenario.X.data))
