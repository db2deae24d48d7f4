import itertools
import math

import numpy as np
import pytest

from maskdiff.oracle import PottsChain, TabularDistribution

LN3 = math.log(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def potts_tight():
    """K=2, L=2, J=ln 3: stay probability 3/4."""
    return PottsChain(2, 2, LN3)


def all_sequences(K, L):
    return np.array(list(itertools.product(range(K), repeat=L)), dtype=np.int64)


def random_tables(n, rng, Ks=(2, 3), Ls=(2, 3, 4)):
    out = []
    for k in range(n):
        out.append(TabularDistribution.random(Ks[k % len(Ks)], Ls[(k // len(Ks)) % len(Ls)], rng))
    return out


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
