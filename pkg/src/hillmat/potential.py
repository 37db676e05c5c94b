"""Periodic real symmetric N x N matrix potentials in finite Fourier form.

A potential is stored through its mean matrix and finite lists of cosine /
sine Fourier coefficient matrices,

    V(t) = V0 + 2 * sum_n (C_n cos(2 pi n t) + S_n sin(2 pi n t)),

with C_n = int_0^1 V(t) cos(2 pi n t) dt and S_n the sine analogue.  All
stored matrices are real symmetric; ``energy_shift`` records any spectral
translation applied when normalizing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SYMMETRY_TOL = 1e-12


class PotentialFormatError(ValueError):
    """Raised when potential data violates the storage contract."""


def _symmetrize(mat, dim, tol=SYMMETRY_TOL, what="matrix"):
    a = np.array(mat, dtype=float)
    if a.shape != (dim, dim):
        raise PotentialFormatError(f"{what}: expected shape {(dim, dim)}, got {a.shape}")
    dev = np.abs(a - a.T).max(initial=0.0)
    scale = 1.0 + np.abs(a).max(initial=0.0)
    if dev > tol * scale:
        raise PotentialFormatError(f"{what}: asymmetry {dev:.3e} exceeds tolerance")
    a = 0.5 * (a + a.T)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PeriodicMatrixPotential:
    """Immutable 1-periodic real symmetric matrix potential."""

    dim: int
    mean: np.ndarray
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()
    energy_shift: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise PotentialFormatError("dim must be a positive integer")
        object.__setattr__(self, "mean", _symmetrize(self.mean, self.dim, what="mean"))
        ncos, nsin = len(self.cos_coeffs), len(self.sin_coeffs)
        order = max(ncos, nsin)
        cos = [_symmetrize(m, self.dim, what=f"cos[{i + 1}]") for i, m in enumerate(self.cos_coeffs)]
        sin = [_symmetrize(m, self.dim, what=f"sin[{i + 1}]") for i, m in enumerate(self.sin_coeffs)]
        zero = np.zeros((self.dim, self.dim))
        zero.setflags(write=False)
        cos += [zero] * (order - ncos)
        sin += [zero] * (order - nsin)
        object.__setattr__(self, "cos_coeffs", tuple(cos))
        object.__setattr__(self, "sin_coeffs", tuple(sin))

    # -- basic accessors -------------------------------------------------

    @property
    def fourier_order(self):
        """Largest index with a nonzero Fourier coefficient."""
        order = 0
        for n, (c, s) in enumerate(zip(self.cos_coeffs, self.sin_coeffs), start=1):
            if np.any(c) or np.any(s):
                order = n
        return order

    def evaluate(self, t):
        """Value V(t); ``t`` may be a scalar or a 1-D array (reduced mod 1)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t) % 1.0
        out = np.broadcast_to(self.mean, (tt.size, self.dim, self.dim)).copy()
        for n, (c, s) in enumerate(zip(self.cos_coeffs, self.sin_coeffs), start=1):
            phase = 2.0 * np.pi * n * tt
            out += 2.0 * np.cos(phase)[:, None, None] * c
            out += 2.0 * np.sin(phase)[:, None, None] * s
        return out[0] if scalar else out

    def hs_norm_sq(self):
        """int_0^1 Tr V(t)^2 dt via the Parseval identity."""
        total = np.trace(self.mean @ self.mean)
        for c, s in zip(self.cos_coeffs, self.sin_coeffs):
            total += 2.0 * (np.trace(c @ c) + np.trace(s @ s))
        return float(total)

    def b_coeff(self, n):
        """B_n = Tr (V0)^n / n! derived from the mean matrix."""
        return float(np.trace(np.linalg.matrix_power(self.mean, n))) / math.factorial(n)

    def fourier_hat(self, n):
        """Complex coefficient C_n + i S_n (zero matrix beyond the stored order)."""
        if n < 1 or n > len(self.cos_coeffs):
            return np.zeros((self.dim, self.dim), dtype=complex)
        return self.cos_coeffs[n - 1] + 1j * self.sin_coeffs[n - 1]

    def hat_norm(self, n):
        """Operator norm of the complex coefficient of index n."""
        h = self.fourier_hat(n)
        return float(np.linalg.norm(h, 2)) if np.any(h) else 0.0

    def mean_eigenvalues(self):
        """Eigenvalues of the mean matrix, ascending."""
        return np.linalg.eigvalsh(self.mean)

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        d = {"dim": self.dim, "mean": self.mean.tolist(), "cos": {}, "sin": {},
             "shift": self.energy_shift}
        for n, (c, s) in enumerate(zip(self.cos_coeffs, self.sin_coeffs), start=1):
            if np.any(c):
                d["cos"][str(n)] = c.tolist()
            if np.any(s):
                d["sin"][str(n)] = s.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            dim = int(d["dim"])
            mean = d["mean"]
        except (KeyError, TypeError, ValueError) as exc:
            raise PotentialFormatError(f"bad potential record: {exc}") from exc
        order = 0
        for key in ("cos", "sin"):
            for sn in d.get(key, {}):
                try:
                    order = max(order, int(sn))
                except ValueError as exc:
                    raise PotentialFormatError(f"bad Fourier index {sn!r}") from exc
        zero = np.zeros((dim, dim))
        cos = [np.array(d.get("cos", {}).get(str(n), zero)) for n in range(1, order + 1)]
        sin = [np.array(d.get("sin", {}).get(str(n), zero)) for n in range(1, order + 1)]
        return cls(dim=dim, mean=np.array(mean), cos_coeffs=tuple(cos),
                   sin_coeffs=tuple(sin), energy_shift=float(d.get("shift", 0.0)))


def zero_potential(dim):
    return PeriodicMatrixPotential(dim=dim, mean=np.zeros((dim, dim)))


def constant_potential(mean):
    mean = np.asarray(mean, dtype=float)
    if mean.ndim == 0:
        mean = mean.reshape(1, 1)
    if mean.ndim == 1:
        mean = np.diag(mean)
    return PeriodicMatrixPotential(dim=mean.shape[0], mean=mean)


def direct_sum(p1, p2):
    """Block-diagonal potential of dimension N1 + N2 (decoupled operators)."""
    dim = p1.dim + p2.dim
    order = max(len(p1.cos_coeffs), len(p2.cos_coeffs))

    def blk(a, b):
        out = np.zeros((dim, dim))
        out[: p1.dim, : p1.dim] = a
        out[p1.dim:, p1.dim:] = b
        return out

    zero1 = np.zeros((p1.dim, p1.dim))
    zero2 = np.zeros((p2.dim, p2.dim))

    def coeff(seq, n, zero):
        return seq[n] if n < len(seq) else zero

    cos = tuple(blk(coeff(p1.cos_coeffs, n, zero1), coeff(p2.cos_coeffs, n, zero2))
                for n in range(order))
    sin = tuple(blk(coeff(p1.sin_coeffs, n, zero1), coeff(p2.sin_coeffs, n, zero2))
                for n in range(order))
    if p1.energy_shift != p2.energy_shift:
        raise PotentialFormatError("direct_sum requires equal energy shifts")
    return PeriodicMatrixPotential(dim=dim, mean=blk(p1.mean, p2.mean),
                                   cos_coeffs=cos, sin_coeffs=sin,
                                   energy_shift=p1.energy_shift)


def _deterministic_eigvecs(mat):
    """eigh with a fixed column-sign convention (largest-|entry| positive)."""
    w, u = np.linalg.eigh(mat)
    for j in range(u.shape[1]):
        k = np.argmax(np.abs(u[:, j]))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
    return w, u


def normalize(p, lambda0_plus):
    """Conjugated, shifted copy: mean diagonal ascending and bottom at zero.

    Returns U^T (V - lambda0 I) U with U orthogonal diagonalizing the mean.
    If the mean has repeated eigenvalues the result depends on the fixed
    eigenvector convention and is not unique as a normal form.
    """
    w, u = _deterministic_eigvecs(p.mean)
    mean = np.diag(w - lambda0_plus)
    cos = tuple(u.T @ c @ u for c in p.cos_coeffs)
    sin = tuple(u.T @ s @ u for s in p.sin_coeffs)
    return PeriodicMatrixPotential(dim=p.dim, mean=mean, cos_coeffs=cos,
                                   sin_coeffs=sin,
                                   energy_shift=p.energy_shift + lambda0_plus)


def load_potential(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PotentialFormatError(f"invalid JSON in {path}: {exc}") from exc
    return PeriodicMatrixPotential.from_dict(data)


def save_potential(p, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(p.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
