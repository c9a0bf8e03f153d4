from dataclasses import replace

import numpy as np
import pytest

from gazeskill import simgaze
from gazeskill.gazeio import GazeRecording


@pytest.fixture(scope="session")
def pro_session():
    """Two-minute pro-profile session at 30 Hz with its ground truth."""
    prof = replace(simgaze.builtin_profile("pro"), seed=11, session_s=120.0)
    return simgaze.gen_session(prof, subject_id="pro-fixture")


@pytest.fixture(scope="session")
def low_session():
    prof = replace(simgaze.builtin_profile("low"), seed=12, session_s=120.0)
    return simgaze.gen_session(prof, subject_id="low-fixture")


def stationary(n, rate_hz=120.0, x=500.0, y=400.0, t0=0.0):
    t = t0 + np.arange(n) * (1000.0 / rate_hz)
    return GazeRecording(t, np.full(n, x), np.full(n, y), np.ones(n, bool), nominal_rate_hz=rate_hz)


_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_acceptance_" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
            _ACCEPTANCE[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split("_")[2])):
        num, topic = name.split("_")[2], " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {num}: {_ACCEPTANCE[name]}  ({topic})")
