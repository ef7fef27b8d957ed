import numpy as np
import pytest
from hypothesis import settings

from dualprox.datasets import generate_dataset
from dualprox.dcopf_gen import load_case
from dualprox.lp_core import ParametricLpInstance

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_instance(rng, m=5, n=8, feasible=False, width=(0.5, 3.0)):
    """Dense bounded LP; with ``feasible`` the rhs comes from an interior point."""
    A = rng.normal(size=(m, n))
    l = rng.uniform(-2.0, 1.0, n)
    u = l + rng.uniform(*width, size=n)
    c = rng.normal(size=n)
    if feasible:
        x0 = l + rng.uniform(0.2, 0.8, n) * (u - l)
        b = A @ x0
    else:
        b = rng.normal(size=m)
    return ParametricLpInstance(A, b, c, l, u)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def case3_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "case3.dpx"
    generate_dataset(load_case("case3"), 200, seed=7, with_oracle=True, workers=1).save(path)
    return path


ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance verdict; all are echoed in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
