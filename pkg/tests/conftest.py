import os

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(config, items):
    """Skip the multi-hour paper-scale suite unless explicitly enabled."""
    if os.environ.get("HELMCVX_PAPER_SCALE"):
        return
    skip = pytest.mark.skip(
        reason="full-resolution suite; set HELMCVX_PAPER_SCALE=1 to run")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)
