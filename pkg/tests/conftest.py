import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def ou_default():
    from ergo_sfde.model import make_builtin
    return make_builtin("ou_jump", {})


@pytest.fixture
def unit_pair():
    from ergo_sfde.segment import Segment
    return Segment.constant(1.0, 1.0), Segment.constant(1.0, 0.0)


@pytest.fixture
def zero_model():
    """b = sigma = gamma = 0, no jumps; goes through the generic numpy integrator."""
    from ergo_sfde.model import ModelSpec

    return ModelSpec(
        n=1, m=1, tau=1.0,
        drift=lambda x0, xd: np.zeros_like(x0),
        diffusion=lambda x0, xd: np.zeros((x0.shape[0], 1, 1)),
        jump_coeff=lambda x0, xd: np.zeros(x0.shape[0]),
        jump_rate=0.0,
        mark_sampler=lambda rng, size: np.ones(size),
        jump_map=lambda z: np.asarray(z, dtype=float).reshape(-1, 1),
        K=1.0, c_moment1=np.zeros(1), c_moment2=0.0, name="zero")


_CRITERIA = []


@pytest.fixture
def criterion():
    """record(number, ok, detail): one pass/fail line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
