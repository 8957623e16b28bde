import json
from pathlib import Path

import numpy as np
import pytest

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture
def oracles():
    return ORACLES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
