import math

import numpy as np
import pytest

from kamtori import (FourierTaylorSeries, IntegrableSystem,
                     certified_frequency)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


@pytest.fixture(scope="session")
def golden_freq():
    return certified_frequency((1.0, GOLDEN), 1.2, 200, alpha=0.25)


@pytest.fixture(scope="session")
def golden_freq_short():
    return certified_frequency((1.0, GOLDEN), 1.2, 60, alpha=0.25)


@pytest.fixture(scope="session")
def benchmark_system():
    return IntegrableSystem.quadratic(2)


@pytest.fixture(scope="session")
def benchmark_f_unit():
    # f = cos q1 + cos(q1 + q2) at unit amplitude
    return FourierTaylorSeries.from_terms(2, [
        ((1, 0), (0, 0), 0.5, (0, 0)), ((-1, 0), (0, 0), 0.5, (0, 0)),
        ((1, 1), (0, 0), 0.5, (0, 0)), ((-1, -1), (0, 0), 0.5, (0, 0)),
    ], d_max=4, real_symmetric=True)


def random_real_series(rng, n=2, kmax=5, dmax=2, nterms=8, d_cap=4):
    """Random sparse real-symmetric series: conjugate mode pairs with
    bounded Fourier and Taylor degrees."""
    terms = []
    for _ in range(nterms):
        k = tuple(int(x) for x in rng.integers(-kmax, kmax + 1, n))
        m = tuple(int(x) for x in rng.integers(0, dmax + 1, n))
        if sum(m) > dmax:
            m = (0,) * n
        c = complex(rng.normal(), rng.normal())
        terms.append((k, m, c / 2, (0,) * n))
        terms.append((tuple(-x for x in k), m, c.conjugate() / 2, (0,) * n))
    return FourierTaylorSeries.from_terms(n, terms, d_max=d_cap,
                                          real_symmetric=True)
