"""
Shared fixtures: a seeded physical deployment and a factory of unit-scale
random channel sets for the algebraic identities.

Solver and optimizer modules log through ``logging``; the autouse fixture
below keeps DEBUG off so that SDR lift verification only runs where a test
asks for it explicitly.
"""

import logging

import numpy as np
import pytest

from channel_model import ChannelSet, SystemConfig, build_geometry, sample_channels

# ---------------------------------------------------------------------------
# Physical deployment (defaults: 4 tx, 1 rx, 16 elements)
# ---------------------------------------------------------------------------


@pytest.fixture
def system():
    return SystemConfig(M=4, N=1, L=16)


@pytest.fixture
def geometry(system):
    return build_geometry(system)


@pytest.fixture
def channels(system, geometry):
    return sample_channels(geometry, system, seed=7)


# ---------------------------------------------------------------------------
# Unit-scale random channels
# ---------------------------------------------------------------------------


def _complex_normal(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def make_channels():
    """Factory: make_channels(L, M, N, seed) -> ChannelSet with CN(0, 2) entries."""

    def _make(L, M, N, seed=0):
        rng = np.random.default_rng(seed)
        return ChannelSet(
            H_ti=_complex_normal(rng, L, M),
            H_tr=_complex_normal(rng, M, N),
            h_id=_complex_normal(rng, L),
            H_ir=_complex_normal(rng, L, N),
        )

    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# pytest fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(autouse=True)
def _quiet_logging():
    """Keep library loggers at INFO between tests."""
    root = logging.getLogger()
    level = root.level
    root.setLevel(logging.INFO)
    yield
    root.setLevel(level)
