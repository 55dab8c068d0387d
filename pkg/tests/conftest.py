import sys

import numpy as np
import pytest

from omnibev import kernels
from omnibev.camera import MeiCamera

KITTI_FISHEYE = MeiCamera(2.2134, 0.0168, 1.6549, 1336.32, 1335.79, 716.94, 705.76, 1400, 1400)


@pytest.fixture
def fisheye():
    return KITTI_FISHEYE


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.backend_name()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
