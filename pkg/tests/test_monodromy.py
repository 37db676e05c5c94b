import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import hillmat as hm
from hillmat.monodromy import (char_poly, integrate_monodromy,
                               integrate_monodromy_batch, j_matrix, l_matrix,
                               modified_monodromy, series_monodromy, traces)


def free_monodromy(z, n):
    z = complex(z)
    m = np.zeros((2 * n, 2 * n), dtype=complex)
    sinc = np.sin(z) / z if z != 0 else 1.0
    m[:n, :n] = np.cos(z) * np.eye(n)
    m[:n, n:] = sinc * np.eye(n)
    m[n:, :n] = -z * np.sin(z) * np.eye(n)
    m[n:, n:] = np.cos(z) * np.eye(n)
    return m


def test_free_operator_closed_form():
    p = hm.zero_potential(2)
    for z in [0.0, 0.3, 5.0, 17.5, 2.0 + 1.5j, 20.0]:
        ms = integrate_monodromy(p, z)
        assert_allclose(ms.monodromy, free_monodromy(z, 2), atol=1e-12)


def test_free_operator_det_m_minus_tau():
    # det(M -+ I) = 2^N (1 -+ cos z)^N at tau = +-1
    for n in (1, 2, 3):
        p = hm.zero_potential(n)
        for z in [0.7, 3.9, 11.1]:
            m = integrate_monodromy(p, z).monodromy
            for tau in (1.0, -1.0):
                got = np.linalg.det(m - tau * np.eye(2 * n))
                want = 2.0 ** n * (1 - tau * np.cos(z)) ** n
                assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_constant_potential_blocks():
    c = [0.7, 3.0]
    p = hm.constant_potential(c)
    for z in [1.3, 2.4, 9.0, 1.0 + 0.4j]:
        ms = integrate_monodromy(p, z)
        for m, cm in enumerate(c):
            w = np.sqrt(complex(z) ** 2 - cm)
            assert_allclose(ms.theta[m, m], np.cos(w), atol=1e-12)
            assert_allclose(ms.phi[m, m], np.sin(w) / w, atol=1e-12)
            assert_allclose(ms.theta_prime[m, m], -w * np.sin(w), atol=1e-11)
            assert_allclose(ms.phi_prime[m, m], np.cos(w), atol=1e-12)


def test_wronskian_symplectic_even_real(small_corpus, rng):
    for name, p in small_corpus.items():
        jm = j_matrix(p.dim)
        eye = np.eye(2 * p.dim)
        zs = rng.uniform(0.3, 12.0, 4) + 1j * rng.uniform(-1.5, 1.5, 4)
        zs = np.concatenate([zs, zs.real])
        for z in zs:
            m = integrate_monodromy(p, z).monodromy
            assert abs(np.linalg.det(m) - 1) < 1e-10, name
            assert np.abs(m @ (-jm @ m.T @ jm) - eye).max() < 1e-10, name
            m_neg = integrate_monodromy(p, -z).monodromy
            assert np.abs(m - m_neg).max() < 1e-10, name
            if abs(z.imag) < 1e-14:       # z^2 real: M real
                assert np.abs(m.imag).max() < 1e-10, name


def test_multiplier_pairing(small_corpus, rng):
    # eigenvalues closed under tau -> 1/tau; and under conjugation when
    # z^2 is real
    p = small_corpus["mixed-n2"]
    for z in [0.9, 4.2, 13.0, 2.2 + 0.7j]:
        tau = np.linalg.eigvals(integrate_monodromy(p, z).monodromy)
        inv = 1.0 / tau
        cost = np.abs(tau[:, None] - inv[None, :])
        assert cost.min(axis=1).max() < 1e-9 * (1 + np.abs(tau).max())
        if complex(z).imag == 0:
            conj = np.conj(tau)
            cost = np.abs(tau[:, None] - conj[None, :])
            assert cost.min(axis=1).max() < 1e-9 * (1 + np.abs(tau).max())


def test_traces_free_and_large_z(small_corpus):
    p0 = hm.zero_potential(2)
    for z in [0.8, 6.5]:
        t = traces(integrate_monodromy(p0, z), 4)
        assert_allclose(t, [np.cos(k * z) for k in range(1, 5)], atol=1e-12)
    # T_1 ~ cos z + (B_1 / 2N) sin z / z at large real z
    p = small_corpus["mixed-n2"]
    b1 = p.b_coeff(1)
    for z in [60.0, 120.0]:
        t1 = traces(integrate_monodromy(p, z), 1)[0]
        model = np.cos(z) + b1 / (2 * p.dim) * np.sin(z) / z
        assert abs(t1 - model) < 5.0 / z ** 2


def test_traces_block_diagonal_average():
    p1 = hm.constant_potential([0.4])
    p2 = hm.PeriodicMatrixPotential(dim=1, mean=[[1.1]], cos_coeffs=([[0.3]],))
    psum = hm.direct_sum(p1, p2)
    for z in [1.7, 5.2]:
        t_sum = traces(integrate_monodromy(psum, z), 3)
        t1 = traces(integrate_monodromy(p1, z), 3)
        t2 = traces(integrate_monodromy(p2, z), 3)
        assert_allclose(t_sum, 0.5 * (t1 + t2), atol=1e-11)


def test_char_poly_free_n1():
    ms = integrate_monodromy(hm.zero_potential(1), 2.3)
    cp = char_poly(ms)
    assert_allclose(cp.xi, [1.0, -2 * np.cos(2.3), 1.0], atol=1e-13)
    assert_allclose(cp.phi, [1.0, -np.cos(2.3)], atol=1e-13)


def test_char_poly_free_binomial():
    # phi_m = (-1)^m C(N, m) cos^m z for the free operator
    for n in (2, 3):
        ms = integrate_monodromy(hm.zero_potential(n), 1.234)
        cp = char_poly(ms)
        want = [(-1) ** m * math.comb(n, m) * np.cos(1.234) ** m
                for m in range(n + 1)]
        assert_allclose(cp.phi, want, atol=1e-12)


def test_char_poly_palindrome_and_phi(small_corpus, rng):
    for name, p in small_corpus.items():
        for z in [1.1, 3.8, 7.9 + 0.9j]:
            ms = integrate_monodromy(p, z)
            cp = char_poly(ms)
            assert_allclose(cp.xi, cp.xi[::-1], rtol=1e-8, atol=1e-10,
                            err_msg=name)
            for _ in range(4):
                tau = complex(rng.normal(), rng.normal())
                if abs(tau) < 0.1:
                    continue
                d_direct = np.linalg.det(ms.monodromy - tau * np.eye(2 * p.dim))
                d_poly = cp.eval_d(tau)
                scale = max(1.0, abs(d_direct))
                assert abs(d_poly - d_direct) / scale < 1e-8
                assert abs(d_poly - tau ** (2 * p.dim) * cp.eval_d(1 / tau)) / scale < 1e-8
                nu = 0.5 * (tau + 1 / tau)
                assert abs(d_poly / (2 * tau) ** p.dim - cp.eval_phi(nu)) / scale < 1e-8


def test_modified_monodromy_and_l_free():
    p = hm.zero_potential(2)
    z = 4.2
    ms = integrate_monodromy(p, z)
    mt = modified_monodromy(ms)
    want = np.cos(z) * np.eye(4) + np.sin(z) * j_matrix(2)
    assert_allclose(mt, want, atol=1e-12)
    assert_allclose(l_matrix(ms), np.cos(z) * np.eye(4), atol=1e-12)


def test_l_block_diagonal_asymptotics(small_corpus):
    # L ~ cos z + (sin z / 2z) V0 block-diagonal up to O(e^|Im z| / z^2)
    p = small_corpus["mixed-n2"]
    y = 24.0
    lmat = l_matrix(integrate_monodromy(p, 1j * y))
    model = np.cos(1j * y) * np.eye(4)
    v0 = np.asarray(p.mean)
    big = np.zeros((4, 4), dtype=complex)
    big[:2, :2] = v0
    big[2:, 2:] = v0
    model = model + np.sin(1j * y) / (2j * y) * big
    assert np.abs(lmat - model).max() < 5 * np.exp(y) / y ** 2


def test_l_at_zero_rejected():
    ms = integrate_monodromy(hm.constant_potential([1.0, 2.0]), 0.0)
    with pytest.raises(ValueError):
        modified_monodromy(ms)


def test_series_partial_sums_free():
    p = hm.zero_potential(2)
    res = series_monodromy(p, 3.1, 0)
    assert_allclose(res.sample.theta, np.cos(3.1) * np.eye(2), atol=1e-12)
    assert_allclose(res.sample.phi, np.sin(3.1) / 3.1 * np.eye(2), atol=1e-12)


def test_series_first_order_constant():
    # one iteration step in closed form: phi_1(1, z) = V (sin z - z cos z) / (2 z^3)
    p = hm.constant_potential([1.7, -0.4])
    z = 6.1
    r0 = series_monodromy(p, z, 0)
    r1 = series_monodromy(p, z, 1)
    phi1 = r1.sample.phi - r0.sample.phi
    want = np.diag([1.7, -0.4]) * (np.sin(z) - z * np.cos(z)) / (2 * z ** 3)
    assert_allclose(phi1, want, atol=1e-13)


def test_series_certified_bound(small_corpus):
    # |z| = 10, ||V|| ~ 1: the partial sums must agree with the integrated
    # solution within the remainder bound (integrator pushed well below it)
    p = small_corpus["coupling-n2"]
    for z in (10.0, 1.5 + 2.0j):
        res = series_monodromy(p, z, 10)
        ms = integrate_monodromy(p, z, steps=4096)
        for blk in ("theta", "phi", "theta_prime", "phi_prime"):
            diff = np.abs(getattr(res.sample, blk) - getattr(ms, blk)).max()
            assert diff <= res.bound_for(blk) + 1e-9


def test_overflow_rescaling():
    p = hm.PeriodicMatrixPotential(dim=2, mean=np.diag([0.0, 1.0]),
                                   cos_coeffs=([[0, 0.2], [0.2, 0]],))
    y = 750.0
    ms = integrate_monodromy(p, 1j * y)
    assert ms.log_scale == y
    assert np.isfinite(ms.monodromy).all()
    # theta ~ cosh(y) ~ e^y / 2: stored value carries exp(-y)
    assert abs(np.log(abs(ms.theta[0, 0])) + ms.log_scale - (y - np.log(2))) < 1e-6


def test_batch_matches_single(small_corpus):
    p = small_corpus["chain-n3"]
    zs = [0.5, 2.5, 1.0 + 1.0j]
    batch = integrate_monodromy_batch(p, zs)
    for z, ms in zip(zs, batch):
        single = integrate_monodromy(p, z, steps=batch[0].steps)
        assert_allclose(ms.monodromy, single.monodromy, atol=1e-13)


def test_solver_config_json_roundtrip():
    cfg = hm.SolverConfig(steps_per_unit=10.0, tol=1e-8, overflow_rescale=500.0)
    back = hm.SolverConfig.from_json(cfg.to_json())
    assert back == cfg
