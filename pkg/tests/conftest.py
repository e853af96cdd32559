import numpy as np
import pytest

from divcurl import cr_system, gradient_system, make_grid
from divcurl.grid import ScalarField, VectorField
from divcurl.harness import EnsembleSpec, random_field


@pytest.fixture(scope="session")
def grad2():
    return gradient_system(2)


@pytest.fixture(scope="session")
def cr3():
    return cr_system()


@pytest.fixture(scope="session")
def systems(grad2, cr3):
    """The two example systems with a grid for each."""
    return {
        "grad2": (grad2, make_grid(2, [32, 32], [1.0, 1.0])),
        "cr3": (cr3, make_grid(3, [16, 16, 16], [1.0, 1.0, 1.0])),
    }


def random_scalar(grid, seed, band=3, index=0):
    spec = EnsembleSpec(seed=seed, count=index + 1, band_limit=band, field_kind="scalar")
    return random_field(grid, spec, index)


def random_vector(sys, grid, seed, band=3, index=0):
    spec = EnsembleSpec(seed=seed, count=index + 1, band_limit=band, field_kind="vector")
    return random_field(grid, spec, index, sys)


def plane_wave(grid, k):
    phase = sum(2 * np.pi * kk * x / L for kk, x, L in zip(k, grid.coords, grid.box))
    return ScalarField(grid, np.exp(1j * phase))


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)
