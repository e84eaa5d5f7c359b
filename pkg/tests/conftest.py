import pytest

from csdnet import diagnostics


@pytest.fixture(autouse=True)
def _clean_counters():
    diagnostics.reset()
    yield
    diagnostics.reset()
