"""Bundled test potentials used by the verification suite and the tests."""

from __future__ import annotations

import numpy as np

from .monodromy import SolverConfig
from .potential import PeriodicMatrixPotential, normalize
from .spectrum import find_lambda0


def coupling_potential(a=0.8, n=1, mean=(0.0, 1.0)):
    """N=2 potential with mean diag and one off-diagonal cosine coefficient.

    The index-n complex Fourier coefficient has |hat V^(n)_{12}| = a/2, the
    configuration that opens a resonance gap near (pi n)^2 + mean-average.
    """
    coup = np.array([[0.0, a / 2.0], [a / 2.0, 0.0]])
    cos = [np.zeros((2, 2))] * (n - 1) + [coup]
    return PeriodicMatrixPotential(dim=2, mean=np.diag(mean),
                                   cos_coeffs=tuple(cos))


def normalized(p, cfg=None):
    """Shift and rotate so the spectral bottom is 0 and the mean is diagonal."""
    cfg = cfg or SolverConfig()
    return normalize(p, find_lambda0(p, cfg))


def small_corpus():
    """Five modest potentials (N = 2 and 3, ||V|| <= 3) for identity sweeps."""
    out = {}
    out["diag-n2"] = PeriodicMatrixPotential(dim=2, mean=np.diag([0.0, 1.5]))
    out["coupling-n2"] = coupling_potential(a=0.8)
    out["mixed-n2"] = PeriodicMatrixPotential(
        dim=2,
        mean=[[0.2, 0.3], [0.3, 1.1]],
        cos_coeffs=([[0.5, 0.1], [0.1, -0.2]], [[0.1, 0.0], [0.0, -0.3]]),
        sin_coeffs=([[0.0, 0.25], [0.25, 0.15]],))
    out["chain-n3"] = PeriodicMatrixPotential(
        dim=3,
        mean=np.diag([0.0, 0.8, 2.0]),
        cos_coeffs=([[0.0, 0.2, 0.0], [0.2, 0.0, 0.3], [0.0, 0.3, 0.0]],))
    out["sine-n3"] = PeriodicMatrixPotential(
        dim=3,
        mean=[[0.3, 0.1, 0.0], [0.1, 1.0, 0.2], [0.0, 0.2, 1.8]],
        cos_coeffs=([[0.2, 0.0, 0.1], [0.0, -0.1, 0.0], [0.1, 0.0, 0.2]],),
        sin_coeffs=([[0.0, 0.15, 0.0], [0.15, 0.1, 0.0], [0.0, 0.0, -0.2]],
                    [[0.1, 0.0, 0.0], [0.0, 0.0, 0.1], [0.0, 0.1, 0.0]]))
    return out


def random_potential(rng, dim=2, order=2, scale=0.5):
    """Random symmetric potential with the given Fourier order."""
    def sym():
        m = rng.normal(scale=scale, size=(dim, dim))
        return 0.5 * (m + m.T)

    return PeriodicMatrixPotential(
        dim=dim, mean=sym(),
        cos_coeffs=tuple(sym() / (k + 1) for k in range(order)),
        sin_coeffs=tuple(sym() / (k + 1) for k in range(order)))
