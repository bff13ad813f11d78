import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from degenbss.cli import main
from degenbss.io import read_matrix_csv, write_matrix_csv
from degenbss.metrics import mixing_angle_errors


def _digest(directory):
    """Hash of every output file; report.json is hashed without its timings block."""
    h = {}
    for path in sorted(directory.iterdir()):
        data = path.read_bytes()
        if path.name == "report.json":
            rep = json.loads(data)
            rep.pop("timings", None)
            data = json.dumps(rep, sort_keys=True).encode()
        h[path.name] = hashlib.sha256(data).hexdigest()
    return h


@pytest.fixture(scope="module")
def scenarios(tmp_path_factory):
    root = tmp_path_factory.mktemp("scen")
    out = {}
    for name, snr in (("pcc2", None), ("ocdc3", 60), ("nna3", None)):
        d = root / name
        args = ["synth", "--preset", name, "--seed", "3", "--out", str(d)]
        if snr is not None:
            args += ["--snr-db", str(snr)]
        assert main(args) == 0
        out[name] = d
    return out


def _separate(scen_dir, out, method, *extra):
    return main(["separate", "--input", str(scen_dir), "--method", method, "--out", str(out), *extra])


def test_synth_writes_scenario(scenarios):
    files = {p.name for p in scenarios["ocdc3"].iterdir()}
    assert {"A.csv", "S.csv", "X.csv"} <= files


def test_nn_on_nna(scenarios, tmp_path):
    assert _separate(scenarios["nna3"], tmp_path, "nn") == 0
    A_hat = read_matrix_csv(tmp_path / "A_hat.csv")
    assert max(mixing_angle_errors(A_hat, read_matrix_csv(scenarios["nna3"] / "A.csv"))) < 1e-10


def test_qp_beats_plain_clustering(scenarios, tmp_path):
    assert _separate(scenarios["pcc2"], tmp_path / "km", "kmeans") == 0
    assert _separate(scenarios["pcc2"], tmp_path / "qp", "kmeans-qp") == 0
    plain = json.loads((tmp_path / "km" / "report.json").read_text())
    refined = json.loads((tmp_path / "qp" / "report.json").read_text())
    assert plain["negative_energy_ratio"] > 0
    assert refined["negative_energy_ratio"] < 0.1 * plain["negative_energy_ratio"]
    assert refined["schema"] == 1 and refined["converged"] is True
    assert (tmp_path / "qp" / "A_refined.csv").exists()


def test_l1_pipeline_and_eval(scenarios, tmp_path):
    run, ev = tmp_path / "run", tmp_path / "eval"
    assert _separate(scenarios["ocdc3"], run, "kmeans-l1", "--mu", "1e-4") == 0
    assert main(["eval", "--scenario", str(scenarios["ocdc3"]), "--run", str(run), "--out", str(ev)]) == 0
    rep = json.loads((ev / "eval.json").read_text())
    assert rep["schema"] == 1
    assert min(rep["per_source_correlation"]) >= 0.99
    assert rep["negative_energy_ratio"] == 0.0
    flat = [v for key in ("matched_scales", "relative_error", "mixing_angle_errors") for v in rep[key]]
    assert all(math.isfinite(v) for v in flat)
    lines = (ev / "traces.csv").read_text().splitlines()
    assert lines[0] == "sample_index,source_id,true_value,recovered_value"
    assert len(lines) == 1 + 3 * 2000


def test_eval_identical_and_swapped(tmp_path, rng):
    S = rng.uniform(0, 1, (2, 30))
    write_matrix_csv(tmp_path / "S.csv", S)
    write_matrix_csv(tmp_path / "Sw.csv", S[::-1])
    assert main(["eval", "--s-hat", str(tmp_path / "S.csv"), "--s-true", str(tmp_path / "S.csv"), "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "eval.json").read_text())
    assert rep["per_source_correlation"] == pytest.approx([1.0, 1.0], abs=1e-15)
    assert rep["negative_energy_ratio"] == 0.0
    assert main(["eval", "--s-hat", str(tmp_path / "Sw.csv"), "--s-true", str(tmp_path / "S.csv"), "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "eval.json").read_text())["matched_perm"] == [1, 0]


def test_eval_shape_mismatch_exits_1(tmp_path):
    write_matrix_csv(tmp_path / "a.csv", np.ones((2, 3)))
    write_matrix_csv(tmp_path / "b.csv", np.ones((2, 4)))
    assert main(["eval", "--s-hat", str(tmp_path / "a.csv"), "--s-true", str(tmp_path / "b.csv"), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize("method", ["nn", "kmeans", "kmeans-qp", "kmeans-l1"])
def test_runs_are_byte_identical(scenarios, tmp_path, method):
    scen = scenarios["nna3" if method == "nn" else "ocdc3" if method == "kmeans-l1" else "pcc2"]
    assert _separate(scen, tmp_path / "a", method, "--seed", "7") == 0
    assert _separate(scen, tmp_path / "b", method, "--seed", "7") == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_synth_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--preset", "ocdc3", "--snr-db", "60", "--seed", "1", "--out", str(tmp_path / d)]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_convergence_failure_exits_2_with_outputs(scenarios, tmp_path):
    code = _separate(scenarios["pcc2"], tmp_path, "kmeans-qp", "--qp-max-iters", "1")
    assert code == 2
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["converged"] is False
    assert (tmp_path / "S_hat.csv").exists()


def test_usage_errors_exit_1(scenarios, tmp_path, capsys):
    assert _separate(tmp_path / "missing", tmp_path / "o", "kmeans") == 1
    assert _separate(scenarios["ocdc3"], tmp_path / "o", "kmeans", "--n-sources", "2") == 1
    assert _separate(scenarios["ocdc3"], tmp_path / "o", "kmeans", "--restarts", "0") == 1
    with pytest.raises(SystemExit) as exc:
        main(["separate", "--input", "x", "--method", "bogus", "--out", str(tmp_path)])
    assert exc.value.code == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "degenbss", "synth", "--preset", "pcc2", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "X.csv").exists()
