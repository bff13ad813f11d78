import sys
import numpy as np
import pytest

from degenbss import synth


@pytest.fixture(scope="session")
def ref_pcc_scenario():
    """Noiseless 2x2 scenario mixed by the printed near-parallel matrix, p = 2000."""
    src = synth.DISourceSpec.banded(2, 2000, seed=1)
    return synth.make_scenario(src, synth.REFERENCE_PCC_MATRIX, snr_db=None, seed=1)


@pytest.fixture(scope="session")
def ocdc3_60db():
    return synth.preset("ocdc3", snr_db=60, seed=7)


@pytest.fixture(scope="session")
def nna3():
    return synth.preset("nna3", seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def inter_column_angle(A):
    from degenbss.core import vector_angle

    return vector_angle(np.asarray(A)[:, 0], np.asarray(A)[:, 1])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
