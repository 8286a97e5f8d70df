import math

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from mcmot.model import Box3D

settings.register_profile("repo", deadline=None, max_examples=100, derandomize=True)
settings.load_profile("repo")

coord = st.floats(-50.0, 50.0, allow_nan=False)
length = st.floats(0.2, 10.0, allow_nan=False)
angle = st.floats(-10.0, 10.0, allow_nan=False)


@st.composite
def boxes(draw, z=True):
    cz = draw(coord) if z else 0.0
    return Box3D((draw(coord), draw(coord), cz), (draw(length), draw(length), draw(length)), draw(angle))


def random_box(rng: np.random.Generator, spread: float = 5.0) -> Box3D:
    return Box3D(tuple(rng.uniform(-spread, spread, 3)), tuple(rng.uniform(0.3, 4.0, 3)), rng.uniform(-math.pi, math.pi))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
