import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairskin.errors import (
    InsufficientDataError,
    NotPSDError,
    PreconditionError,
)
from fairskin.numerics import Rng, eig_sym, gaussian_stats, grad_check, sqrtm_psd


def random_symmetric(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return (a + a.T) / 2.0


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + 0.1 * np.eye(n)


# ---------------------------------------------------------------- Rng streams

def test_rng_same_path_same_draws():
    a = Rng(7).stream("noise").standard_normal(16)
    b = Rng(7).stream("noise").standard_normal(16)
    assert np.array_equal(a, b)


def test_rng_different_names_diverge():
    a = Rng(7).stream("noise").standard_normal(16)
    b = Rng(7).stream("init").standard_normal(16)
    assert not np.array_equal(a, b)


def test_rng_different_seeds_diverge():
    a = Rng(0).stream("noise").standard_normal(16)
    b = Rng(1).stream("noise").standard_normal(16)
    assert not np.array_equal(a, b)


def test_rng_nested_streams_are_path_keyed():
    a = Rng(3).stream("a").stream("b").standard_normal(8)
    b = Rng(3).stream("a").stream("b").standard_normal(8)
    c = Rng(3).stream("b").stream("a").standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_substream_independent_of_parent_draws():
    # pulling values from the parent must not change what a named child yields
    parent = Rng(11)
    before = parent.stream("child").standard_normal(4)
    parent.standard_normal(100)
    after = parent.stream("child").standard_normal(4)
    assert np.array_equal(before, after)


def test_rng_delegates_generator_methods():
    r = Rng(0).stream("x")
    vals = r.integers(0, 10, size=50)
    assert vals.min() >= 0 and vals.max() < 10
    u = r.uniform(2.0, 3.0, size=10)
    assert np.all((u >= 2.0) & (u < 3.0))


# ------------------------------------------------------------ eigendecomposition

def test_eig_sym_matches_lapack_eigenvalues():
    rng = np.random.default_rng(0)
    for n in (2, 3, 5, 8, 13):
        a = random_symmetric(rng, n, scale=3.0)
        w, v = eig_sym(a)
        expected = np.sort(np.linalg.eigvalsh(a))[::-1]
        assert np.allclose(w, expected, atol=1e-10)
        assert np.allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)
        assert np.allclose(v.T @ v, np.eye(n), atol=1e-10)


def test_eig_sym_descending_order():
    rng = np.random.default_rng(1)
    w, _ = eig_sym(random_symmetric(rng, 6))
    assert np.all(np.diff(w) <= 1e-12)


def test_eig_sym_diagonal_input():
    w, v = eig_sym(np.diag([3.0, -1.0, 2.0]))
    assert np.allclose(w, [3.0, 2.0, -1.0])
    assert np.allclose(np.abs(v), np.eye(3)[:, [0, 2, 1]])


def test_eig_sym_one_by_one():
    w, v = eig_sym(np.array([[4.0]]))
    assert np.allclose(w, [4.0])
    assert np.allclose(v, [[1.0]])


def test_eig_sym_rejects_asymmetric():
    with pytest.raises(PreconditionError):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eig_sym_rejects_nonsquare():
    with pytest.raises(PreconditionError):
        eig_sym(np.ones((2, 3)))


def test_eig_sym_rejects_nonfinite():
    with pytest.raises(PreconditionError):
        eig_sym(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_eig_sym_near_degenerate_spectrum():
    # clustered eigenvalues exercise convergence near the tolerance floor
    rng = np.random.default_rng(2)
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    lam = np.array([1.0, 1.0 + 1e-9, 1.0 + 2e-9, 2.0, 2.0, 5.0, 5.0 + 1e-12, -3.0])
    a = (q * lam) @ q.T
    a = (a + a.T) / 2.0
    w, v = eig_sym(a)
    assert np.allclose(np.sort(w), np.sort(lam), atol=1e-8)
    assert np.allclose(v @ np.diag(w) @ v.T, a, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_eig_sym_reconstruction_property(seed, n):
    rng = np.random.default_rng(seed)
    a = random_symmetric(rng, n, scale=10.0)
    w, v = eig_sym(a)
    assert np.allclose(v @ np.diag(w) @ v.T, a, atol=1e-8 * max(1.0, np.abs(a).max()))
    assert np.allclose(v.T @ v, np.eye(n), atol=1e-9)


# ------------------------------------------------------------------ sqrtm_psd

def test_sqrtm_psd_squares_back():
    rng = np.random.default_rng(3)
    for n in (2, 4, 9):
        a = random_spd(rng, n)
        s = sqrtm_psd(a)
        assert np.allclose(s @ s, a, atol=1e-9)
        assert np.array_equal(s, s.T)


def test_sqrtm_psd_matches_scipy():
    scipy_linalg = pytest.importorskip("scipy.linalg")
    rng = np.random.default_rng(4)
    a = random_spd(rng, 6)
    expected = np.real(scipy_linalg.sqrtm(a))
    assert np.allclose(sqrtm_psd(a), expected, atol=1e-8)


def test_sqrtm_psd_clamps_rounding_noise():
    # exactly singular plus a rounding-scale negative eigenvalue
    a = np.diag([1.0, 0.0, 0.0])
    s = sqrtm_psd(a)
    assert np.allclose(s, np.diag([1.0, 0.0, 0.0]))


def test_sqrtm_psd_rejects_indefinite():
    with pytest.raises(NotPSDError):
        sqrtm_psd(np.diag([1.0, -0.5]))


# -------------------------------------------------------------- gaussian_stats

def test_gaussian_stats_matches_numpy_cov():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 7))
    mu, cov = gaussian_stats(x)
    assert np.allclose(mu, x.mean(axis=0))
    assert np.allclose(cov, np.cov(x, rowvar=False, ddof=1), atol=1e-12)
    assert np.array_equal(cov, cov.T)


def test_gaussian_stats_two_points():
    mu, cov = gaussian_stats(np.array([[0.0, 0.0], [2.0, 4.0]]))
    assert np.allclose(mu, [1.0, 2.0])
    assert np.allclose(cov, [[2.0, 4.0], [4.0, 8.0]])


def test_gaussian_stats_accepts_lists():
    mu, cov = gaussian_stats([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert mu.shape == (2,) and cov.shape == (2, 2)


def test_gaussian_stats_needs_two_vectors():
    with pytest.raises(InsufficientDataError):
        gaussian_stats(np.ones((1, 5)))


def test_gaussian_stats_rejects_wrong_rank():
    with pytest.raises(PreconditionError):
        gaussian_stats(np.ones(5))


# ------------------------------------------------------------------ grad_check

def test_grad_check_accepts_correct_gradient():
    def f(p):
        return float(np.sum(p**2)), 2.0 * p

    err = grad_check(f, np.array([1.0, -2.0, 0.5]), indices=[0, 1, 2])
    assert err < 1e-9


def test_grad_check_flags_wrong_gradient():
    def f(p):
        return float(np.sum(p**2)), 2.0 * p + 0.1

    err = grad_check(f, np.array([1.0, -2.0, 0.5]), indices=[0, 1, 2])
    assert err > 1e-2
