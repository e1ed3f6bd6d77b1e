"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

import pytest

CRITERIA = {
    1: "force-noise amplitude to 2 significant figures",
    2: "tip mass from diameter and density",
    3: "correlation time and independent-sample count",
    4: "Q beta^2 against tabulated couplings",
    5: "end-to-end thermometry over 100 seeds",
    6: "Boltzmann band check and mismatch rejection",
    7: "PSD Lorentzian fit, equipartition and Parseval",
    8: "displacement calibration round trip and electrostatic flag",
    9: "MFFT mask, calibration slope and hold-out temperatures",
    10: "proportionality and saturation fits",
    11: "byte-identical outputs for every command",
}

_outcomes: dict[int, list[bool]] = {}
_details: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def detail(request):
    """Callable that attaches a short result line to the test's criterion."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        if marker is not None:
            _details.setdefault(marker.args[0], []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped:
        return
    if rep.when == "call" or rep.failed:
        _outcomes.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, text in CRITERIA.items():
        results = _outcomes.get(n)
        status = "NOT RUN" if results is None else ("PASS" if all(results) else "FAIL")
        extra = "; ".join(_details.get(n, []))
        tr.write_line(f"criterion {n:2d}: {status:7s} {text}" + (f" [{extra}]" if extra else ""))
