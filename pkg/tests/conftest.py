import numpy as np
import pytest

from loopflow import lambdaverify as lv
from loopflow import model as mdl
from loopflow import spectral
from loopflow.config import RunConfig, build_setup, sweep_spec
from loopflow.loopspace import LoopField

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def pendulum():
    return mdl.pendulum()


@pytest.fixture(scope="session")
def crit(pendulum):
    return mdl.find_critical_loop(pendulum, LoopField.constant(3.0))


@pytest.fixture(scope="session")
def dec(crit, pendulum):
    return spectral.decompose(spectral.assemble(pendulum, crit))


@pytest.fixture(scope="session")
def bundled():
    return RunConfig.load()


@pytest.fixture(scope="session")
def setup(bundled) -> lv.Setup:
    return build_setup(bundled)


@pytest.fixture(scope="session")
def spec(bundled, setup):
    return sweep_spec(bundled, setup.ledger.T0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d}: {detail}")
