import numpy as np
import pytest

from lfmm.model import haar_spec

SQRT2 = float(np.sqrt(2.0))


def fig3_spec(seed=0, laws="gaussian"):
    """p=200, s=[1.5, 0.5], V = diag(2, 1, ..., 1) H."""
    return haar_spec(200, [1.5, 0.5], laws, 0.5, seed, diag_scale=[2.0])


def rademacher_laws(p):
    return ["rademacher"] + ["gaussian"] * (p - 1)


@pytest.fixture(scope="session")
def spec_fig3():
    return fig3_spec()


@pytest.fixture(scope="session")
def spec_fig3_rademacher():
    return fig3_spec(laws=rademacher_laws(200))


@pytest.fixture(scope="session")
def spec_small():
    return haar_spec(40, [SQRT2], "gaussian", 0.5, 3)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
