import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_triples(rng, n, d=3):
    """Endpoint pairs in the prior box with unit normals."""
    x0 = rng.uniform(-1, 1, (n, d))
    x1 = rng.uniform(-1, 1, (n, d))
    nh = rng.normal(size=(n, d))
    nh /= np.linalg.norm(nh, axis=1, keepdims=True)
    return x0, x1, nh


# --------------------------------------------------------------------------- acceptance report

_AC_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        number, title, detail = marker
        _AC_RESULTS[number] = (report.outcome, title, detail)


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("criterion")
    if m is not None and not any(k == "criterion" for k, _ in item.user_properties):
        item.user_properties.append(("criterion", (m.args[0], m.args[1], "")))


def pytest_terminal_summary(terminalreporter):
    if not _AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_AC_RESULTS):
        outcome, title, detail = _AC_RESULTS[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"AC{number:>2} {verdict}  {title}" + (f"  [{detail}]" if detail else ""))
