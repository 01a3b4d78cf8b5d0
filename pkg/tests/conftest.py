import numpy as np
import pytest

from sharpen import kernels
from sharpen.models import PromptDistribution, PromptSpace, ResponseSpace, TabularModel


def tab(*rows, responses=None):
    """Tabular model with prompts x0, x1, ... and the given rows."""
    rows = [list(r) for r in rows]
    k = len(rows[0])
    ps = PromptSpace([f"x{i}" for i in range(len(rows))])
    rs = ResponseSpace(responses or [f"y{j}" for j in range(k)])
    return TabularModel(ps, rs, rows)


def uniform_mu(model):
    return PromptDistribution.uniform(model.prompts)


@pytest.fixture(params=["python", "compiled"])
def backend(request):
    if request.param == "compiled" and not kernels.HAVE_COMPILED:
        pytest.skip("compiled kernels not built")
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend("auto")


@pytest.fixture
def rng():
    from sharpen.rng import RngStream
    return RngStream(12345)


def sigma3(p, n):
    return 3 * np.sqrt(p * (1 - p) / n)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
