import sys

import numpy as np
import pytest

from lhash.keyset import KeySet


@pytest.fixture
def identity_keys():
    return KeySet(np.arange(100, dtype=np.uint64))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
