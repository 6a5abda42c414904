import numpy as np
import pytest

from mfl_minimax.core import (
    DOMAIN_USER,
    ParticleSet,
    standard_gaussian,
    uniform_block,
)


@pytest.fixture(scope="session")
def gauss():
    return standard_gaussian()


@pytest.fixture(scope="session")
def gauss_pair(gauss):
    return (gauss, gauss)


def sample_quadrature(gq, n, seed, tag=0):
    """Deterministic i.i.d.-style draws from a quadrature density via its
    inverse CDF applied to seeded uniforms."""
    u = uniform_block(seed, DOMAIN_USER, tag, 0, (n,))
    return ParticleSet(gq.quantile(u))


def shifted_gaussian_particles(n, mean, seed, tag=0):
    from scipy.special import ndtri

    u = uniform_block(seed, DOMAIN_USER, tag, 1, (n,))
    return ParticleSet(mean + ndtri(u))
