import re

import numpy as np
import pytest

from nsvdelay.delay import DelaySpec, PhysicalParams, ProcessState
from nsvdelay.spectral import Grid, random_field
from nsvdelay.stepper import ForcingSpec, StepperConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid16():
    return Grid(2, 16)


@pytest.fixture
def params16(grid16):
    return PhysicalParams.for_grid(grid16, 1.0, 1.0, 0.5)


@pytest.fixture
def small_setup(grid16, params16):
    """Forced delayed 2D run setting shared by several modules."""
    rng = np.random.default_rng(3)
    F = random_field(grid16, rng, kmax=2, norm_value=1.0, space="H")
    u0 = random_field(grid16, rng, kmax=3, norm_value=1.0)
    cfg = StepperConfig(0.01, "imex_cnab2", 0.0, 6.0)
    return {
        "grid": grid16,
        "params": params16,
        "f": ForcingSpec.constant(F),
        "g": DelaySpec(gain=0.1),
        "cfg": cfg,
        "u0": u0,
        "state": ProcessState.initial(u0, dt=cfg.dt, h=params16.h),
    }


# --------------------------------------------------------------------------- acceptance report

_RESULTS = pytest.StashKey[dict]()
_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for the acceptance criterion named by the test."""
    number = int(_CRITERION.search(request.node.name).group(1))
    results = request.config.stash[_RESULTS]

    def record(passed: bool, detail: str):
        results[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    yield record
    if number not in results:
        results[number] = (False, "raised before reporting")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
