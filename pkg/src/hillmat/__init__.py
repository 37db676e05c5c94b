"""Floquet spectral analysis of -f'' + V(t) f on the line, V periodic matrix."""

from .potential import (
    PeriodicMatrixPotential,
    PotentialFormatError,
    constant_potential,
    direct_sum,
    load_potential,
    normalize,
    save_potential,
    zero_potential,
)
from .monodromy import (
    CharPolyCoeffs,
    MonodromySample,
    SolverConfig,
    char_poly,
    integrate_monodromy,
    integrate_monodromy_batch,
    l_matrix,
    modified_monodromy,
    series_monodromy,
    traces,
)

__all__ = [name for name in dir() if not name.startswith("_")]
