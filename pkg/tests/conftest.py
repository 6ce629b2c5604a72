import numpy as np
import pytest

from rdpf.copulas import CouplingSpec, SourceSpec
from rdpf.marginals import make_standardized


def scalar(family="gaussian", mean=0.0, variance=1.0) -> SourceSpec:
    return SourceSpec((make_standardized(family, mean, variance),))


def bivariate(family="gaussian", rho=0.0) -> SourceSpec:
    m = make_standardized(family)
    return SourceSpec((m, m), CouplingSpec.bivariate(rho))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed:
        _ACCEPTANCE[name] = "PASS" if report.passed and _ACCEPTANCE.get(name) != "FAIL" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def number(name):
        return int(name.split("_")[2])

    for name in sorted(_ACCEPTANCE, key=number):
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number(name):>2} ({label}): {_ACCEPTANCE[name]}")
