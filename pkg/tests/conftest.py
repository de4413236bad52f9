from __future__ import annotations

import os

# every layer call checks its output for NaN/inf under test
os.environ.setdefault("LESIONSEG_CHECK_FINITE", "1")

import numpy as np
import pytest

from lesionseg.imaging import BinaryMask

ACCEPTANCE_LINES: list = []


def disk_mask(size: int, cx: int, cy: int, radius: float) -> BinaryMask:
    ys, xs = np.mgrid[0:size, 0:size]
    return BinaryMask(((xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius).astype(np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
