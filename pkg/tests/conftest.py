from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import HARMONIC_A, HARMONIC_B, HARMONIC_Q, HARMONIC_QF, HARMONIC_R, HARMONIC_T  # noqa: E402

from avglqr import LqrProblem  # noqa: E402
from avglqr.experiment import ExperimentConfig, run_levels  # noqa: E402


@pytest.fixture(scope="session")
def harmonic():
    return LqrProblem(HARMONIC_A, HARMONIC_B, HARMONIC_Q, HARMONIC_R, HARMONIC_QF, HARMONIC_T)


@pytest.fixture(scope="session")
def default_report():
    """The full ten-level table with default settings (computed once)."""
    return run_levels(ExperimentConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
