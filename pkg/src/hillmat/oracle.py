"""Independent ground truth: finite differences and constant-potential forms.

The eigenvalue oracle discretizes -f'' + V f with central differences on a
uniform grid over one period, wrapping the stencil around with a sign twist
for the anti-periodic condition, and Richardson-extrapolates K against 2K.
It shares no code with the monodromy pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .quasimomentum import eta


@dataclass(frozen=True)
class FDProblem:
    grid: int
    bc: str                    # 'periodic' or 'antiperiodic'
    matrix: np.ndarray

    @property
    def size(self):
        return self.matrix.shape[0]


def assemble_fd(p, bc, grid):
    """NK x NK symmetric central-difference matrix for the chosen condition."""
    if bc not in ("periodic", "antiperiodic"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    n, k = p.dim, grid
    h = 1.0 / k
    sign = 1.0 if bc == "periodic" else -1.0
    mat = np.zeros((n * k, n * k))
    tgrid = np.arange(k) * h
    vvals = p.evaluate(tgrid)
    eye = np.eye(n)
    for j in range(k):
        b = slice(j * n, (j + 1) * n)
        mat[b, b] = 2.0 / h ** 2 * eye + vvals[j]
        jn = (j + 1) % k
        wrap = sign if jn != j + 1 else 1.0
        bn = slice(jn * n, (jn + 1) * n)
        mat[b, bn] += -wrap / h ** 2 * eye
        mat[bn, b] += -wrap / h ** 2 * eye
    return FDProblem(grid=k, bc=bc, matrix=mat)


def fd_eigenvalues(p, bc, count, grid=512):
    """Lowest eigenvalues with Richardson error estimates.

    Returns (values, error_estimates): values are the (4 L_2K - L_K)/3
    extrapolations of the K and 2K central-difference runs, and the error
    estimate is the removed h^2 term |L_2K - L_K| / 3 plus a small floor.
    """
    if grid < 64:
        raise ValueError("grid must be at least 64")
    if count > p.dim * grid // 4:
        raise ValueError("count too large for this grid")
    lam = {}
    for k in (grid, 2 * grid):
        prob = assemble_fd(p, bc, k)
        lam[k] = scipy.linalg.eigh(prob.matrix, eigvals_only=True,
                                   subset_by_index=[0, count - 1])
    coarse, fine = lam[grid][:count], lam[2 * grid][:count]
    extrap = (4.0 * fine - coarse) / 3.0
    err = np.abs(fine - coarse) / 3.0 + 1e-9 * (1.0 + np.abs(extrap))
    return extrap, err


def constant_potential_reference(c_list, lam):
    """Closed-form Delta values, discriminant, and exponent for constant V.

    For V = diag(c_1..c_N) the branches are cos(sqrt(lam - c_m)), with the
    cosh continuation below each threshold.  Returns (deltas, rho, v).
    """
    c = np.asarray(c_list, dtype=float)
    deltas = np.cos(np.sqrt(np.asarray(lam, dtype=complex) - c))
    rho = 1.0 + 0.0j
    for i in range(len(c)):
        for j in range(i + 1, len(c)):
            rho *= (deltas[i] - deltas[j]) ** 2
    q = np.zeros(len(c))
    for m, d in enumerate(deltas):
        if abs(d.imag) < 1e-12 and abs(d.real) <= 1.0:
            continue
        q[m] = np.log(np.abs(eta(d)))
    return deltas, complex(rho), float(q.sum() / len(c))
