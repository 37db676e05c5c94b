import json

import numpy as np
import pytest
from numpy.testing import assert_allclose
from hypothesis import given, settings, strategies as st

import hillmat as hm
from hillmat.potential import PotentialFormatError


def quad_hs_norm(p, npts=4096):
    tgrid = (np.arange(npts) + 0.5) / npts
    vals = p.evaluate(tgrid)
    return float(np.einsum("tij,tji->", vals, vals)) / npts


def test_evaluate_zero_and_constant():
    p = hm.zero_potential(2)
    assert_allclose(p.evaluate(0.31), np.zeros((2, 2)))
    q = hm.constant_potential([0.0, 3.0])
    assert_allclose(q.evaluate(0.7), np.diag([0.0, 3.0]))


def test_evaluate_single_cosine():
    # C_1 = [[0, 1/2], [1/2, 0]] gives V(0) = [[0, 1], [1, 0]]
    p = hm.PeriodicMatrixPotential(dim=2, mean=np.zeros((2, 2)),
                                   cos_coeffs=([[0, 0.5], [0.5, 0]],))
    assert_allclose(p.evaluate(0.0), [[0, 1], [1, 0]], atol=1e-15)
    t = np.linspace(0, 1, 7)
    assert_allclose(p.evaluate(t)[:, 0, 1], np.cos(2 * np.pi * t), atol=1e-15)


def test_periodicity_exact():
    p = hm.PeriodicMatrixPotential(dim=2, mean=[[0.2, 0.1], [0.1, 1.0]],
                                   cos_coeffs=([[0.3, 0], [0, -0.2]],),
                                   sin_coeffs=([[0, 0.4], [0.4, 0]],))
    # exact equality whenever t + 1 is exactly representable
    for t in (0.375, 0.5, 0.8125, 0.0):
        assert np.array_equal(p.evaluate(t), p.evaluate(t + 1.0))
    # generic t: t + 1 rounds, so only the reduced argument is shared
    assert_allclose(p.evaluate(0.37), p.evaluate(1.37), rtol=0, atol=1e-14)


def test_hs_norm_examples():
    assert hm.zero_potential(3).hs_norm_sq() == 0.0
    assert_allclose(hm.constant_potential([0.0, 3.0]).hs_norm_sq(), 9.0)
    p = hm.PeriodicMatrixPotential(dim=2, mean=np.zeros((2, 2)),
                                   cos_coeffs=([[0, 0.5], [0.5, 0]],))
    assert_allclose(p.hs_norm_sq(), 1.0, rtol=1e-14)


def test_parseval_vs_quadrature(small_corpus):
    for name, p in small_corpus.items():
        hs = p.hs_norm_sq()
        assert_allclose(hs, quad_hs_norm(p), rtol=1e-8, err_msg=name)


def test_normalize_constant():
    p = hm.constant_potential([3.0, 1.0])
    q = hm.normalize(p, 1.0)
    assert_allclose(q.mean, np.diag([0.0, 2.0]), atol=1e-14)
    assert q.energy_shift == 1.0


def test_normalize_preserves_shifted_norm():
    p = hm.PeriodicMatrixPotential(dim=2, mean=[[1.0, 1.0], [1.0, 1.0]],
                                   cos_coeffs=([[0.3, 0.1], [0.1, -0.4]],),
                                   sin_coeffs=([[0.0, 0.2], [0.2, 0.0]],))
    lam0 = 0.37
    q = hm.normalize(p, lam0)
    assert_allclose(np.sort(np.linalg.eigvalsh(q.mean)),
                    np.sort(np.linalg.eigvalsh(p.mean)) - lam0, atol=1e-13)
    shifted = hm.PeriodicMatrixPotential(
        dim=2, mean=np.asarray(p.mean) - lam0 * np.eye(2),
        cos_coeffs=p.cos_coeffs, sin_coeffs=p.sin_coeffs)
    assert_allclose(q.hs_norm_sq(), shifted.hs_norm_sq(), rtol=1e-12)
    # mean diagonal ascending
    assert np.all(np.diff(np.diag(q.mean)) >= 0)
    assert np.abs(q.mean - np.diag(np.diag(q.mean))).max() < 1e-12


def test_direct_sum_blocks():
    z2 = hm.direct_sum(hm.zero_potential(1), hm.zero_potential(1))
    assert z2.dim == 2 and z2.hs_norm_sq() == 0.0
    q = hm.constant_potential([1.5])
    qq = hm.direct_sum(q, q)
    assert_allclose(qq.mean, np.diag([1.5, 1.5]))
    p1 = hm.PeriodicMatrixPotential(dim=1, mean=[[0.5]], cos_coeffs=([[0.25]],))
    p2 = hm.constant_potential([2.0])
    ps = hm.direct_sum(p1, p2)
    assert_allclose(ps.evaluate(0.2)[0, 0], p1.evaluate(0.2)[0, 0])
    assert ps.evaluate(0.2)[0, 1] == 0.0
    assert_allclose(ps.hs_norm_sq(), p1.hs_norm_sq() + p2.hs_norm_sq())


def test_b_coefficients():
    p = hm.constant_potential([1.0, 2.0])
    assert_allclose(p.b_coeff(1), 3.0)
    assert_allclose(p.b_coeff(2), (1 + 4) / 2)
    assert_allclose(p.b_coeff(3), (1 + 8) / 6)


def test_json_roundtrip(tmp_path, small_corpus):
    for name, p in small_corpus.items():
        path = tmp_path / f"{name}.json"
        hm.save_potential(p, path)
        q = hm.load_potential(path)
        assert q.dim == p.dim
        assert_allclose(q.evaluate(0.413), p.evaluate(0.413), atol=1e-15)


def test_asymmetric_rejected():
    with pytest.raises(PotentialFormatError):
        hm.PeriodicMatrixPotential(dim=2, mean=[[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(PotentialFormatError):
        hm.PeriodicMatrixPotential.from_dict(
            {"dim": 2, "mean": [[0, 0], [0, 0]],
             "cos": {"1": [[0, 1e-6], [0, 0]]}, "sin": {}})


def test_bad_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(PotentialFormatError):
        hm.load_potential(path)


@st.composite
def potentials(draw):
    dim = draw(st.integers(min_value=1, max_value=3))
    order = draw(st.integers(min_value=0, max_value=2))
    elems = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)

    def sym():
        m = np.array(draw(st.lists(st.lists(elems, min_size=dim, max_size=dim),
                                   min_size=dim, max_size=dim)))
        return 0.5 * (m + m.T)

    return hm.PeriodicMatrixPotential(
        dim=dim, mean=sym(),
        cos_coeffs=tuple(sym() for _ in range(order)),
        sin_coeffs=tuple(sym() for _ in range(order)))


@settings(max_examples=25, deadline=None)
@given(potentials(), st.floats(min_value=-3, max_value=3, allow_nan=False))
def test_value_symmetric_and_periodic(p, t):
    v = p.evaluate(t)
    assert_allclose(v, v.T, atol=1e-12)
    assert_allclose(v, p.evaluate(t + 1.0), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(potentials())
def test_parseval_property(p):
    assert_allclose(p.hs_norm_sq(), quad_hs_norm(p, 2048),
                    rtol=1e-8, atol=1e-10)
