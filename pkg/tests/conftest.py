import shutil

import pytest
from hypothesis import HealthCheck, settings

from birsym import solver

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def external_solver_available() -> bool:
    cmd = solver.smtlib.command()
    return bool(cmd) and shutil.which(cmd[0]) is not None


needs_smt = pytest.mark.skipif(not external_solver_available(), reason="no SMT-LIB solver on PATH")


@pytest.fixture(autouse=True)
def _reset_solver_default():
    solver.set_default_config(None)
    yield
    solver.set_default_config(None)
