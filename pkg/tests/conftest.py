import json
import sys
from pathlib import Path

import numpy as np
import pytest

from nmrqsim.pipeline import setup_tomography, tce_variant
from nmrqsim.qops import from_json_dict

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def tce_weak():
    """tce with the carbon pair reduced to ZZ coupling."""
    return tce_variant("secular")


@pytest.fixture(scope="session")
def tce_full():
    return tce_variant("full")


@pytest.fixture(scope="session")
def tomo_weak(tce_weak):
    return setup_tomography(tce_weak)


@pytest.fixture(scope="session")
def tomo_full(tce_full):
    return setup_tomography(tce_full)


@pytest.fixture(scope="session")
def measured_ghz():
    d = json.loads((DATA / "measured_ghz.json").read_text())
    return from_json_dict(d) * d["scale"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
