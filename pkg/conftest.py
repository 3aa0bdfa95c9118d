"""
Shared fixtures for the degenbeam test suite.
"""

import pytest

from src.models.discretization import BoundaryRegime
from src.services.coefficient import DegeneracyCoefficient, classify
from src.services.discretization import assemble, build_mesh


@pytest.fixture
def sqrt_coeff():
    """a(x) = x^(1/2), weakly degenerate with K = 1/2."""
    return DegeneracyCoefficient.power(0.5)


@pytest.fixture
def sqrt_class(sqrt_coeff):
    return classify(sqrt_coeff)


@pytest.fixture
def sd_coeff():
    """a(x) = x^(3/2), strongly degenerate with K = 3/2."""
    return DegeneracyCoefficient.power(1.5)


@pytest.fixture
def sd_class(sd_coeff):
    return classify(sd_coeff)


@pytest.fixture
def system():
    """Factory assembling a uniform-mesh system."""
    def build(coeff, degeneracy, n_elements=16, regime=None):
        return assemble(coeff, degeneracy, build_mesh(n_elements), regime or BoundaryRegime.adjoint())
    return build


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size runs; deselect with -m 'not slow'")
