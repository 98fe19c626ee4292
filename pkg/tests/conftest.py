import pytest

from gfperc.kernels import bargmann_fock, build_sqrt_kernel
from gfperc.lattice import spectral_mesh


@pytest.fixture(scope="session")
def bf():
    return bargmann_fock()


@pytest.fixture(scope="session")
def bf_table_half(bf):
    """Square-root table for lattice mesh 0.5 (spectral mesh 0.5/sqrt(2))."""
    return build_sqrt_kernel(bf, spectral_mesh(0.5))


@pytest.fixture(scope="session")
def bf_table_unit(bf):
    """Square-root table for lattice mesh 1.0."""
    return build_sqrt_kernel(bf, spectral_mesh(1.0))
