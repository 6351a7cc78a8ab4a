import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pmelab", max_examples=25, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "pmelab"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density_values(rng, shape, floor=0.2):
    """Strictly positive smooth-ish values; callers normalise."""
    return floor + rng.random(shape)


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
