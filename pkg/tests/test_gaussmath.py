import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gac.errors import DimensionMismatch, NotPositiveDefinite
from gac.gaussmath import (Gaussian, gauss_entropy, gauss_kl, gauss_logpdf, gauss_sample,
                           spd_factor, spd_inverse, spd_logdet)
from gac.oracle import ActionGrid, entropy_quadrature, kl_quadrature

from conftest import random_spd


def test_factor_of_identity_and_diagonal():
    assert np.array_equal(spd_factor(np.eye(2)), np.eye(2))
    assert np.allclose(spd_factor(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_factor_reconstructs(rng):
    m = random_spd(rng, 3)
    L = spd_factor(m)
    assert np.allclose(np.tril(L), L)
    assert np.abs(m - L @ L.T).max() / np.abs(m).max() < 1e-10


def test_factor_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        spd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        spd_factor(np.array([[np.nan]]))
    with pytest.raises(DimensionMismatch):
        spd_factor(np.ones((2, 3)))


def test_jitter_rescues_singular_psd():
    m = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = spd_factor(m)
    assert np.allclose(L @ L.T, m, atol=1e-7)
    with pytest.raises(NotPositiveDefinite):
        spd_factor(m, jitter=False)


def test_inverse_and_logdet_batched(rng):
    ms = np.stack([random_spd(rng, 3) for _ in range(4)])
    inv = spd_inverse(ms)
    assert np.allclose(inv @ ms, np.eye(3), atol=1e-10)
    assert np.isclose(spd_logdet(ms[0]), np.linalg.slogdet(ms[0])[1])


def test_kl_examples():
    assert gauss_kl(Gaussian([0.0], [[1.0]]), Gaussian([0.0], [[1.0]])) == 0.0
    assert np.isclose(gauss_kl(Gaussian([0.0], [[1.0]]), Gaussian([1.0], [[1.0]])), 0.5)
    assert np.isclose(gauss_kl(Gaussian([0.0], [[2.0]]), Gaussian([0.0], [[1.0]])),
                      0.5 * (2 - 1 - np.log(2)), atol=1e-12)
    assert np.isclose(0.5 * (2 - 1 - np.log(2)), 0.15343, atol=1e-5)


def test_kl_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gauss_kl(Gaussian([0.0], [[1.0]]), Gaussian([0.0, 0.0], np.eye(2)))


def test_entropy_examples():
    assert np.isclose(gauss_entropy(Gaussian([0.0], [[1.0]])), 1.41894, atol=1e-5)
    for d in (1, 2, 3):
        base = gauss_entropy(Gaussian(np.zeros(d), 0.01 * np.eye(d)))
        assert np.isclose(base, d * 0.5 * np.log(2 * np.pi * np.e * 0.01))


def test_entropy_scaling(rng):
    cov = random_spd(rng, 3)
    c = 1.7
    e1 = gauss_entropy(Gaussian(np.zeros(3), cov))
    e2 = gauss_entropy(Gaussian(np.zeros(3), c * c * cov))
    assert np.isclose(e2 - e1, 3 * np.log(c))


def test_gaussian_invariants():
    with pytest.raises(NotPositiveDefinite):
        Gaussian([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        Gaussian([0.0], [[-1.0]])
    with pytest.raises(DimensionMismatch):
        Gaussian([0.0, 1.0], [[1.0]])
    with pytest.raises(NotPositiveDefinite):
        Gaussian([0.0], [[-1e-6]])


def test_logpdf_matches_scalar_formula():
    p = Gaussian([1.0], [[4.0]])
    x = np.array([[0.0], [3.0]])
    ref = -0.5 * ((x[:, 0] - 1.0) ** 2 / 4.0 + np.log(2 * np.pi * 4.0))
    assert np.allclose(gauss_logpdf(p, x), ref)


def test_sampling_statistics_and_determinism():
    p = Gaussian(np.zeros(2), np.eye(2))
    x = gauss_sample(p, np.random.default_rng(0), size=100_000)
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)
    a = gauss_sample(p, np.random.default_rng(5), size=10)
    b = gauss_sample(p, np.random.default_rng(5), size=10)
    assert np.array_equal(a, b)
    assert gauss_sample(p, np.random.default_rng(0)).shape == (2,)


def test_zero_covariance_is_floored_by_jitter():
    # the jitter floor lets an exactly singular covariance through once
    x = gauss_sample(Gaussian([0.5], [[0.0]]), np.random.default_rng(0), size=1000)
    assert np.abs(x - 0.5).max() < 1e-3


@st.composite
def gaussians(draw, d):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    r = np.random.default_rng(seed)
    return Gaussian(r.normal(0, 0.5, d), random_spd(r, d, 0.3, 1.5))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4).flatmap(lambda d: st.tuples(gaussians(d), gaussians(d))))
def test_kl_nonnegative_and_zero_on_self(pq):
    p, q = pq
    assert gauss_kl(p, q) >= 0.0
    assert gauss_kl(p, p) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 2).flatmap(lambda d: st.tuples(gaussians(d), gaussians(d))))
def test_kl_and_entropy_match_quadrature(pq):
    p, q = pq
    res = 2001 if p.dim == 1 else 301
    grid = ActionGrid.around(p.mean, p.cov, n_std=12, resolution=res)
    assert abs(gauss_kl(p, q) - kl_quadrature(p.mean, p.cov, q.mean, q.cov, grid)) < 1e-6
    assert abs(gauss_entropy(p) - entropy_quadrature(p.mean, p.cov, grid)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_factor_round_trip_property(d, seed):
    m = random_spd(np.random.default_rng(seed), d, 1e-3, 1e3)
    L = spd_factor(m)
    assert np.abs(m - L @ L.T).max() / np.abs(m).max() < 1e-10
