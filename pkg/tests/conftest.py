import numpy as np
import pytest

from vargram import IrkConfig, builtin_model

H2O2_X0 = np.array([1.0, 0.05, 0.05, 0.5, 0.1, 0.2, 0.05, 0.05, 0.8])
LORENZ_X0 = np.array([1.0, 1.0, 1.0])
CYCLE_X0 = np.array([1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def lorenz():
    return builtin_model("lorenz63")


@pytest.fixture(scope="session")
def cycle3():
    return builtin_model("cycle3")


@pytest.fixture(scope="session")
def h2o2():
    return builtin_model("h2o2_surrogate")


@pytest.fixture
def cfg():
    return IrkConfig(1e-3)


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))


def random_stable(rng, n, radius=0.95):
    a = rng.standard_normal((n, n))
    return a * (radius / max(abs(np.linalg.eigvals(a))))


def random_psd_sensors(rng, n_y, n_x, rank=1):
    out = []
    for _ in range(n_y):
        b = rng.standard_normal((rank, n_x))
        out.append(b.T @ b)
    return np.array(out)


# one PASS/FAIL line per acceptance criterion in the terminal summary
ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    from test_acceptance import DETAILS

    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split("_")[2])):
        n = int(name.split("_")[2])
        status = "PASS" if ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {DETAILS.get(n, '')}")
