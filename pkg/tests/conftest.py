"""Shared helpers for the test suite."""

import numpy as np
import pytest

from pmc.grid import ScalarField, TorusGrid, c1_norm, mean

TWO_PI = 2.0 * np.pi


def random_band_limited(grid: TorusGrid, rng, modes: int = 4, max_wavenumber: int = 3) -> ScalarField:
    """Seeded random trigonometric sum (band-limited, hence exactly resolved)."""
    vals = np.zeros(grid.shape)
    coords = grid.coordinates()
    for _ in range(modes):
        k = rng.integers(-max_wavenumber, max_wavenumber + 1, size=grid.dim)
        phase = rng.uniform(0, TWO_PI)
        arg = sum(TWO_PI * k[d] * coords[d] for d in range(grid.dim))
        vals += rng.normal() / modes * np.cos(arg + phase)
    return ScalarField(grid, vals)


def random_zero_mean(grid: TorusGrid, rng, **kw) -> ScalarField:
    u = random_band_limited(grid, rng, **kw)
    return ScalarField(grid, u.values - np.mean(u.values))


def scaled_to_c1(u: ScalarField, bound: float) -> ScalarField:
    """Rescale so the discrete C^1 norm equals `bound`."""
    norm = c1_norm(u)
    if norm == 0:
        return u
    return ScalarField(u.grid, u.values * (bound / norm))


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
