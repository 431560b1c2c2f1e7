import numpy as np
import pytest

from rabot import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numpy", "numba"])
def kernel_impl(request, monkeypatch):
    """Run a test once per kernel backend by swapping the active dispatch."""
    impl = _kernels.numpy_impl if request.param == "numpy" else _kernels.numba_impl
    if impl is None:
        pytest.skip("numba unavailable")
    monkeypatch.setattr(_kernels, "active", impl)
    return impl


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
