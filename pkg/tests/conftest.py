import numpy as np
import pytest

import hillmat as hm
from hillmat import corpus
from hillmat.monodromy import SolverConfig
from hillmat.spectrum import find_lambda0, scan_bands


@pytest.fixture(scope="session")
def cfg():
    return SolverConfig()


@pytest.fixture(scope="session")
def small_corpus():
    return corpus.small_corpus()


@pytest.fixture(scope="session")
def coupling_raw():
    return corpus.coupling_potential(a=0.8)


@pytest.fixture(scope="session")
def coupling_norm(coupling_raw, cfg):
    return hm.normalize(coupling_raw, find_lambda0(coupling_raw, cfg))


@pytest.fixture(scope="session")
def coupling_structure(coupling_norm, cfg):
    # covers the low sigma_(1) region and eight cluster windows
    lam_max = (np.pi * 8.5) ** 2
    return scan_bands(coupling_norm, lam_max, cfg=cfg)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(116132)
