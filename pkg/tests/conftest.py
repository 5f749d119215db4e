import math

import numpy as np
import pytest

from csbpx.levy import Exponential, JumpMeasure, LevyModel


def brownian_model():
    # psi(s) = s^2 - s, W(x) = e^x - 1
    return LevyModel(2.0, 1.0, JumpMeasure.none())


def cp_model():
    # psi(s) = s(s - 1) / (2(1 + s)), W(x) = 4 e^x - 2
    return LevyModel(0.0, 0.5 - 2 / math.e, JumpMeasure.compound_poisson(1.0, Exponential(1.0)))


def mixed_model():
    # sigma > 0 plus exponential(2) jumps; rational transform
    return LevyModel(1.0, 1.0, JumpMeasure.compound_poisson(1.0, Exponential(2.0)))


@pytest.fixture
def bm():
    return brownian_model()


@pytest.fixture
def cp():
    return cp_model()


@pytest.fixture
def mixed():
    return mixed_model()


@pytest.fixture(params=["brownian", "cp", "mixed"])
def any_model(request):
    return {"brownian": brownian_model, "cp": cp_model, "mixed": mixed_model}[request.param]()


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
