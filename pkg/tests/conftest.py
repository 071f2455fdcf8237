from __future__ import annotations

import numpy as np
import pytest

from frontfill.fill import FillConfig, fill_parallel, fill_sequential
from frontfill.geometry import ConstantSpacing, Disc


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running scale/benchmark test")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile (or load from cache) every kernel once, so individual tests
    measure algorithm time rather than compiler time."""
    disc = Disc(center=[0.0, 0.0], radius=1.0)
    cfg = FillConfig(domain=disc, spacing=ConstantSpacing(0.2), rng_seed=0)
    fill_sequential(cfg, [np.zeros(2)])
    cfg2 = FillConfig(domain=disc, spacing=ConstantSpacing(0.1), rng_seed=0, threads=2)
    fill_parallel(cfg2)


@pytest.fixture
def unit_disc() -> Disc:
    return Disc(center=[0.0, 0.0], radius=1.0)
