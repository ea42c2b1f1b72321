import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from cosod.backbone import BackboneConfig  # noqa: E402
from cosod.correspondence import init_head_params  # noqa: E402
from cosod.synthetic import make_groups, write_dataset  # noqa: E402

TINY_BACKBONE = BackboneConfig("vit-small-8", 32, "random:0")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_backbone_cfg():
    return TINY_BACKBONE


@pytest.fixture
def small_dataset(tmp_path):
    groups = make_groups(2, 4, size=(40, 48), seed=3)
    return write_dataset(groups, tmp_path / "data"), groups


@pytest.fixture
def random_params(rng):
    def make(c, seed=0, **kw):
        return init_head_params(c, seed=seed, dtype=np.float64, **kw)

    return make


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 10):
        if number in ACCEPTANCE:
            ok, detail = ACCEPTANCE[number]
            terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        else:
            terminalreporter.write_line(f"criterion {number}: NOT RUN")
