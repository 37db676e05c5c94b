"""Monodromy matrices of -f'' + V f = z^2 f over one period.

The fundamental system Y' = A(t) Y, A = [[0, I], [V(t) - z^2 I, 0]], is
propagated with a fourth-order Magnus stepper (two Gauss-Legendre nodes per
step).  The stepper is exact for constant coefficients and keeps the
propagator inside the symplectic group, so det M = 1 and the pairing of
multipliers hold to roundoff by construction.  For |z| >= 1 the balanced
variable diag(I, zI)^-1 Y diag(I, zI) is propagated instead, which keeps
step generators of norm O(h |z|) rather than O(h |z|^2) and produces the
modified monodromy matrix directly.

Also here: the analytic-iteration solver on a Chebyshev grid (an
independent discretization, with a certified remainder bound), normalized
traces, and the reduction of det(M - tau I) to the degree-N polynomial in
nu = (tau + 1/tau)/2 through the Chebyshev identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from scipy.fft import dct


@dataclass(frozen=True)
class SolverConfig:
    """Reproducible integrator and tolerance settings."""

    steps_per_unit: float = 12.0        # steps ~ steps_per_unit * (|z| + norm scale)
    min_steps: int = 64
    fourier_steps_per_order: float = 48.0  # resolve oscillation of V itself
    tol: float = 1e-9                   # generic residual scale for checks
    overflow_rescale: float = 680.0     # |Im z| above which solutions are rescaled
    small_z: float = 1e-8               # |z| below which multiplier fallback is used
    pair_tol: float = 2e-5              # eigenvalue doubling tolerance (relative)
    merge_tol: float = 1e-6             # branch collision tolerance (relative)

    def steps_for(self, p, zmax):
        """Step count for potential ``p`` and spectral parameters up to |z|=zmax."""
        if p.fourier_order == 0:
            return 1          # the stepper is exact for constant coefficients
        vscale = math.sqrt(max(p.hs_norm_sq(), 0.0))
        n = max(self.min_steps,
                int(math.ceil(self.steps_per_unit * (zmax + vscale + 1.0))),
                int(math.ceil(self.fourier_steps_per_order * p.fourier_order)))
        return n

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def j_matrix(n):
    j = np.zeros((2 * n, 2 * n))
    j[:n, n:] = np.eye(n)
    j[n:, :n] = -np.eye(n)
    return j


def j1_matrix(n):
    return np.diag(np.r_[np.ones(n), -np.ones(n)])


def j2_matrix(n):
    j = np.zeros((2 * n, 2 * n))
    j[:n, n:] = np.eye(n)
    j[n:, :n] = np.eye(n)
    return j


# ---------------------------------------------------------------------------
# batched matrix exponential (Pade(7,7) with scaling and squaring)

_PADE7 = np.array([17297280.0, 8648640.0, 1995840.0, 277200.0,
                   25200.0, 1512.0, 56.0, 1.0])
_THETA7 = 0.95


def _expm_batch(a):
    """exp(a) for a stack (..., m, m); accurate for the small norms we feed it."""
    norms = np.abs(a).sum(axis=-1).max(axis=-1)
    s = np.zeros(norms.shape, dtype=int)
    big = norms > _THETA7
    if big.any():
        s[big] = np.ceil(np.log2(norms[big] / _THETA7)).astype(int)
        a = a / (2.0 ** s)[..., None, None]
    eye = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (_PADE7[7] * a6 + _PADE7[5] * a4 + _PADE7[3] * a2 + _PADE7[1] * eye)
    v = _PADE7[6] * a6 + _PADE7[4] * a4 + _PADE7[2] * a2 + _PADE7[0] * eye
    e = np.linalg.solve(v - u, v + u)
    smax = int(s.max(initial=0))
    for k in range(smax):
        mask = s > k
        e[mask] = e[mask] @ e[mask]
    return e


# ---------------------------------------------------------------------------
# monodromy samples

@dataclass(frozen=True)
class MonodromySample:
    """Fundamental-solution data at t = 1 for one spectral parameter z.

    When ``log_scale`` is nonzero the stored blocks carry an implicit factor
    exp(log_scale) that was removed to avoid overflow at large |Im z|.
    """

    z: complex
    theta: np.ndarray
    theta_prime: np.ndarray
    phi: np.ndarray
    phi_prime: np.ndarray
    log_scale: float = 0.0
    steps: int = 0

    @property
    def dim(self):
        return self.theta.shape[0]

    @property
    def monodromy(self):
        n = self.dim
        m = np.empty((2 * n, 2 * n), dtype=complex)
        m[:n, :n] = self.theta
        m[:n, n:] = self.phi
        m[n:, :n] = self.theta_prime
        m[n:, n:] = self.phi_prime
        return m


_GL_C1 = 0.5 - math.sqrt(3.0) / 6.0
_GL_C2 = 0.5 + math.sqrt(3.0) / 6.0
_GL_CK = math.sqrt(3.0) / 12.0
_BALANCE_MIN = 1.0


def _propagate(vals1, vals2, zs, h, balanced, rescale):
    """Magnus-4 sweep; vals*: (steps, N, N) potential samples at the GL nodes."""
    steps, n = vals1.shape[0], vals1.shape[1]
    nb = len(zs)
    z = zs[:, None, None]
    eye_n = np.eye(n)
    y = np.broadcast_to(np.eye(2 * n, dtype=complex), (nb, 2 * n, 2 * n)).copy()
    a1 = np.zeros((nb, 2 * n, 2 * n), dtype=complex)
    a2 = np.zeros((nb, 2 * n, 2 * n), dtype=complex)
    if balanced:
        a1[:, :n, n:] = z * eye_n
        a2[:, :n, n:] = z * eye_n
    else:
        a1[:, :n, n:] = eye_n
        a2[:, :n, n:] = eye_n
    shift = rescale[:, None, None] * h
    for k in range(steps):
        if balanced:
            a1[:, n:, :n] = (vals1[k] - z ** 2 * eye_n) / z
            a2[:, n:, :n] = (vals2[k] - z ** 2 * eye_n) / z
        else:
            a1[:, n:, :n] = vals1[k] - z ** 2 * eye_n
            a2[:, n:, :n] = vals2[k] - z ** 2 * eye_n
        om = (h / 2.0) * (a1 + a2) + (_GL_CK * h * h) * (a2 @ a1 - a1 @ a2)
        if rescale.any():
            om = om - shift * np.eye(2 * n)
        y = _expm_batch(om) @ y
    return y


def integrate_monodromy_batch(p, zs, cfg=None, steps=None):
    """Monodromy samples at each z in ``zs``; one shared step count."""
    cfg = cfg or SolverConfig()
    zs = np.asarray(zs, dtype=complex)
    flat = zs.ravel()
    if steps is None:
        steps = cfg.steps_for(p, float(np.abs(flat).max(initial=0.0)))
    h = 1.0 / steps
    tgrid = np.arange(steps) * h
    vals1 = p.evaluate(tgrid + _GL_C1 * h)
    vals2 = p.evaluate(tgrid + _GL_C2 * h)
    n = p.dim

    rescale = np.where(np.abs(flat.imag) > cfg.overflow_rescale,
                       np.abs(flat.imag), 0.0)
    out = [None] * len(flat)
    big = np.abs(flat) >= _BALANCE_MIN
    for mask, balanced in ((big, True), (~big, False)):
        if not mask.any():
            continue
        zsub = flat[mask]
        y = _propagate(vals1, vals2, zsub, h, balanced, rescale[mask])
        idx = np.nonzero(mask)[0]
        for i, (z, yi) in enumerate(zip(zsub, y)):
            if balanced:
                theta = yi[:n, :n]
                phi = yi[:n, n:] / z
                theta_p = yi[n:, :n] * z
                phi_p = yi[n:, n:]
            else:
                theta, phi = yi[:n, :n], yi[:n, n:]
                theta_p, phi_p = yi[n:, :n], yi[n:, n:]
            out[idx[i]] = MonodromySample(
                z=complex(z), theta=theta, theta_prime=theta_p, phi=phi,
                phi_prime=phi_p, log_scale=float(rescale[mask][i]), steps=steps)
    return out


def integrate_monodromy(p, z, cfg=None, steps=None):
    """Monodromy sample at a single spectral parameter."""
    return integrate_monodromy_batch(p, [z], cfg=cfg, steps=steps)[0]


def modified_monodromy(ms):
    """diag(I, zI)^-1 M diag(I, zI); same multipliers, balanced entries."""
    if ms.z == 0:
        raise ValueError("modified monodromy is singular at z = 0; "
                         "use multiplier pairing of M instead")
    n = ms.dim
    mt = np.empty((2 * n, 2 * n), dtype=complex)
    mt[:n, :n] = ms.theta
    mt[:n, n:] = ms.z * ms.phi
    mt[n:, :n] = ms.theta_prime / ms.z
    mt[n:, n:] = ms.phi_prime
    return mt


def l_matrix(ms):
    """(Mt + Mt^-1)/2 assembled from block transposes, no inversion.

    Its 2N eigenvalues are the N Lyapunov values, each of multiplicity two.
    """
    mt = modified_monodromy(ms)
    n = ms.dim
    l = np.empty_like(mt)
    m11, m12 = mt[:n, :n], mt[:n, n:]
    m21, m22 = mt[n:, :n], mt[n:, n:]
    l[:n, :n] = 0.5 * (m11 + m22.T)
    l[:n, n:] = 0.5 * (m12 - m12.T)
    l[n:, :n] = 0.5 * (m21 - m21.T)
    l[n:, n:] = 0.5 * (m11.T + m22)
    return l


def traces(ms, m_max):
    """Normalized traces Tr M^m / 2N for m = 1..m_max.

    With a nonzero ``log_scale`` the true trace regains a factor
    exp(m * log_scale); the scaled-back value is returned and may overflow.
    """
    m = ms.monodromy
    two_n = m.shape[0]
    out = np.empty(m_max, dtype=complex)
    power = m
    for k in range(1, m_max + 1):
        val = np.trace(power) / two_n
        if ms.log_scale:
            val = val * math.exp(k * ms.log_scale)
        out[k - 1] = val
        if k < m_max:
            power = power @ m
    return out


# ---------------------------------------------------------------------------
# characteristic polynomial reduction

def _neumaier_accumulate(terms):
    """Compensated complex summation (used where magnitudes mix badly)."""
    s = 0.0 + 0.0j
    comp = 0.0 + 0.0j
    for t in terms:
        tmp = s + t
        if abs(tmp.real) + abs(tmp.imag) >= abs(t.real) + abs(t.imag):
            comp += (s - tmp) + t
        else:
            comp += (t - tmp) + s
        s = tmp
    return s + comp


@dataclass(frozen=True)
class CharPolyCoeffs:
    """Coefficients of det(M - tau I) and of its reduction in nu."""

    z: complex
    xi: np.ndarray          # xi_0 .. xi_2N, det(M - tau) = sum xi_m tau^(2N-m)
    phi: np.ndarray         # phi_0 .. phi_N, Phi(nu) = sum phi_m nu^(N-m)
    cheb: np.ndarray        # Chebyshev-basis coefficients of Phi

    @property
    def dim(self):
        return (len(self.xi) - 1) // 2

    def eval_d(self, tau):
        return np.polyval(self.xi, tau)

    def eval_phi(self, nu):
        return _cheb.chebval(nu, self.cheb)

    def phi_roots(self):
        """Zeros of Phi(nu, z): the Lyapunov values at this z."""
        return np.roots(self.phi)


def char_poly(ms, trace_values=None):
    """xi recursion plus the Chebyshev-identity reduction to Phi(nu, z)."""
    n = ms.dim
    two_n = 2 * n
    t = traces(ms, two_n) if trace_values is None else np.asarray(trace_values)
    xi = np.zeros(two_n + 1, dtype=complex)
    xi[0] = 1.0
    careful = n >= 4
    for m in range(1, two_n + 1):
        terms = [t[m - j - 1] * xi[j] for j in range(m)]
        acc = _neumaier_accumulate(terms) if careful else sum(terms)
        xi[m] = -(two_n / m) * acc
    # D(tau)/ (2 tau)^N = 2^(1-N) sum_{k=1..N} xi_{N-k} T_k(nu) + 2^-N xi_N
    cheb_c = np.zeros(n + 1, dtype=complex)
    cheb_c[0] = xi[n] * 2.0 ** (-n)
    for k in range(1, n + 1):
        cheb_c[k] = xi[n - k] * 2.0 ** (1 - n)
    power = _cheb.cheb2poly(cheb_c)        # ascending in nu
    phi = power[::-1].copy()               # phi_m multiplies nu^(N-m)
    return CharPolyCoeffs(z=ms.z, xi=xi, phi=phi, cheb=cheb_c)


# ---------------------------------------------------------------------------
# analytic iteration on a Chebyshev grid

def _cheb_nodes_01(m):
    """m Chebyshev-Lobatto points; index 0 maps to t=1, index m-1 to t=0."""
    x = np.cos(np.pi * np.arange(m) / (m - 1))
    return 0.5 * (1.0 + x)


def _cheb_coeffs(vals):
    """Values on Lobatto nodes (leading axis) -> Chebyshev coefficients."""
    m = vals.shape[0]
    c = dct(vals, type=1, axis=0) / (m - 1)
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


def _cheb_vals(coeffs):
    c = coeffs.copy()
    c[1:-1] *= 0.5
    return dct(c, type=1, axis=0)


def _cumulative_integral(vals):
    """int_0^t f ds for f sampled on the Lobatto grid (same grid out)."""
    m = vals.shape[0]
    a = _cheb_coeffs(vals)
    b = np.zeros_like(a)
    # antiderivative in x on [-1, 1]; dt = dx / 2
    b[1] = a[0] - 0.5 * a[2] if m > 2 else a[0]
    for k in range(2, m):
        upper = a[k + 1] if k + 1 < m else 0.0
        b[k] = (a[k - 1] - upper) / (2.0 * k)
    signs = (-1.0) ** np.arange(1, m)
    shape = (m - 1,) + (1,) * (a.ndim - 1)
    b[0] = -np.sum(signs.reshape(shape) * b[1:], axis=0)
    return 0.5 * _cheb_vals(b)


@dataclass(frozen=True)
class SeriesResult:
    """Partial sums of the analytic iteration plus the certified remainder."""

    sample: MonodromySample
    n0: int
    error_bound: float       # bounds |theta - sum|, |z|_1 |phi - sum|, etc.

    def bound_for(self, block):
        z1 = max(1.0, abs(self.sample.z))
        weight = {"theta": 1.0, "phi": 1.0 / z1,
                  "theta_prime": z1, "phi_prime": 1.0}[block]
        return self.error_bound * weight


def series_monodromy(p, z, n0, grid=None):
    """Iterated-kernel partial sums sum_0^n0 of the fundamental solutions.

    Independent of the Magnus path: the Volterra iteration is carried out by
    spectrally accurate indefinite integration on a Chebyshev grid.
    """
    if n0 < 0:
        raise ValueError("n0 must be nonnegative")
    z = complex(z)
    if grid is None:
        grid = int(np.ceil(1.5 * (abs(z) + 2 * np.pi * p.fourier_order))) + 48
    t = _cheb_nodes_01(grid)
    n = p.dim
    vmat = p.evaluate(t)                       # (grid, N, N)
    eye = np.eye(n)

    if abs(z) > 1e-12:
        sin_t = np.sin(z * t)[:, None, None]
        cos_t = np.cos(z * t)[:, None, None]
        phi_cur = sin_t / z * eye
        phi_p_cur = cos_t * eye
        th_cur = cos_t * eye
        th_p_cur = -z * sin_t * eye
    else:
        phi_cur = t[:, None, None] * eye
        phi_p_cur = np.ones_like(t)[:, None, None] * eye + 0j
        th_cur = np.ones_like(t)[:, None, None] * eye + 0j
        th_p_cur = np.zeros((grid, n, n), dtype=complex)

    phi_sum, phi_p_sum = phi_cur.copy(), phi_p_cur.copy()
    th_sum, th_p_sum = th_cur.copy(), th_p_cur.copy()

    for _ in range(n0):
        rhs_phi = vmat @ phi_cur
        rhs_th = vmat @ th_cur
        if abs(z) > 1e-12:
            c_phi = _cumulative_integral(cos_t * rhs_phi)
            s_phi = _cumulative_integral(sin_t * rhs_phi)
            c_th = _cumulative_integral(cos_t * rhs_th)
            s_th = _cumulative_integral(sin_t * rhs_th)
            phi_cur = (sin_t * c_phi - cos_t * s_phi) / z
            phi_p_cur = cos_t * c_phi + sin_t * s_phi
            th_cur = (sin_t * c_th - cos_t * s_th) / z
            th_p_cur = cos_t * c_th + sin_t * s_th
        else:
            tt = t[:, None, None]
            p0, p1 = _cumulative_integral(rhs_phi), _cumulative_integral(tt * rhs_phi)
            q0, q1 = _cumulative_integral(rhs_th), _cumulative_integral(tt * rhs_th)
            phi_cur, phi_p_cur = tt * p0 - p1, p0
            th_cur, th_p_cur = tt * q0 - q1, q0
        phi_sum += phi_cur
        phi_p_sum += phi_p_cur
        th_sum += th_cur
        th_p_sum += th_p_cur

    kappa = math.sqrt(max(p.hs_norm_sq(), 0.0)) / max(1.0, abs(z))
    bound = kappa ** (n0 + 1) / math.factorial(n0 + 1) * math.exp(abs(z.imag) + kappa)
    sample = MonodromySample(z=z, theta=th_sum[0], theta_prime=th_p_sum[0],
                             phi=phi_sum[0], phi_prime=phi_p_sum[0],
                             steps=grid)
    return SeriesResult(sample=sample, n0=n0, error_bound=bound)
