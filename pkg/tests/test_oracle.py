import numpy as np
import pytest

from gac.critic import QuadraticCritic
from gac.errors import GridTooCoarse
from gac.gaussmath import Gaussian, gauss_entropy, gauss_kl
from gac.guide import guide_from_dual, solve_dual, taylor_at
from gac.oracle import (ActionGrid, constrained_guide_reference, dual_quadrature,
                        entropy_quadrature, fd_gradient, fd_jacobian, guide_grid_search,
                        kl_quadrature, mlp_forward_reference)

from conftest import random_spd


def test_grid_resolution_floor_and_dimension():
    with pytest.raises(ValueError):
        ActionGrid([-1.0], [1.0], 63)
    with pytest.raises(ValueError):
        ActionGrid([-1.0, -1.0], [1.0, 1.0], 47)
    with pytest.raises(ValueError):
        ActionGrid(-np.ones(3), np.ones(3), 64)
    g = ActionGrid([-1.0], [1.0], 65)
    assert np.isclose(g.weights.sum(), 2.0)
    assert g.refined().resolution == (129,)


def test_gaussian_quadratures(rng):
    cov = random_spd(rng, 2, 0.3, 1.0)
    grid = ActionGrid.around([0.1, -0.2], cov, n_std=10)
    assert np.isclose(entropy_quadrature([0.1, -0.2], cov, grid),
                      gauss_entropy(Gaussian([0.1, -0.2], cov)), atol=1e-6)
    p, q = Gaussian([0.1, -0.2], cov), Gaussian([0.3, 0.0], 1.5 * cov)
    assert np.isclose(kl_quadrature(p.mean, p.cov, q.mean, q.cov, grid), gauss_kl(p, q),
                      atol=1e-6)


def test_flat_critic_with_eta_only_has_zero_log_term():
    pol = Gaussian([0.2], [[0.4]])
    grid = ActionGrid.around(pol.mean, pol.cov)
    v = dual_quadrature(pol, lambda A: np.zeros(len(A)), 1e6, 1e-6, 0.0, 0.0, grid)
    assert abs(v) < 1e-4


def test_dual_quadrature_refinement_is_converged():
    pol = Gaussian([0.0], [[1.0]])
    q = QuadraticCritic(-np.eye(1), np.array([0.5]))
    grid = ActionGrid.around(pol.mean, pol.cov, n_std=10)
    a = dual_quadrature(pol, q, 1.0, 0.5, 0.1, 0.0, grid, state=np.zeros(1))
    b = dual_quadrature(pol, q, 1.0, 0.5, 0.1, 0.0, grid.refined(), state=np.zeros(1))
    assert abs(a - b) < 1e-5
    with pytest.raises(GridTooCoarse):
        dual_quadrature(pol, q, 1e-3, 1e-3, 0.1, 0.0, ActionGrid([-10.0], [10.0], 64),
                        state=np.zeros(1))
    with pytest.raises(ValueError):
        dual_quadrature(pol, q, 1.0, 1.0, 0.1, 0.0, ActionGrid([-1.0], [1.0], 64),
                        state=np.zeros(1))


def test_zero_critic_grid_moments_recover_policy():
    pol = Gaussian([0.3], [[0.5]])
    grid = ActionGrid.around(pol.mean, pol.cov, n_std=12, resolution=1601)
    # with eta >> omega the tilt pi^(eta/c) is pi itself
    m = guide_grid_search(pol, lambda A: np.zeros(len(A)), 1e8, 1e-8, grid)
    assert np.abs(m.mean - 0.3).max() < 1e-6 and np.abs(m.cov - 0.5).max() < 1e-6


def test_grid_moments_match_closed_form_1d(rng):
    q = QuadraticCritic(-np.array([[1.5]]), np.array([0.4]), 0.2)
    pol = Gaussian([0.1], [[0.6]])
    tm = taylor_at(q, np.zeros((1, 1)), pol.mean[None],
                   lambda S, A: np.full((1, 1, 1), -1.5))
    g = guide_from_dual(tm, pol.mean[None], pol.cov, 0.8, 0.3).entry(0)
    grid = ActionGrid.around(pol.mean, pol.cov, n_std=10, extra=[g.mean])
    m = guide_grid_search(pol, q, 0.8, 0.3, grid, state=np.zeros(1))
    assert np.abs(m.mean - g.mean).max() < 1e-4 and np.abs(m.cov - g.cov).max() < 1e-4


def test_finite_differences():
    g = fd_gradient(lambda x: x @ x, np.array([1.0, 2.0]))
    assert np.allclose(g, [2.0, 4.0], atol=1e-8)
    c = np.array([0.3, -1.0, 2.0])
    assert np.allclose(fd_gradient(lambda x: c @ x, np.zeros(3), h=0.7), c, atol=1e-14)
    J = fd_jacobian(lambda x: np.array([x[0] * x[1], x[1]]), np.array([2.0, 3.0]))
    assert np.allclose(J, [[3.0, 2.0], [0.0, 1.0]], atol=1e-8)
    with pytest.raises(ValueError):
        fd_gradient(lambda x: 0.0, np.zeros(1), h=0.0)


def test_fd_entropy_gradient_in_variance():
    # d/dv 0.5 log(2 pi e v) = 1 / (2 v)
    f = lambda v: gauss_entropy(Gaussian([0.0], [[v[0]]]))
    assert abs(fd_gradient(f, np.array([0.7]))[0] - 1 / 1.4) < 1e-6


def test_reference_forward_pass(rng):
    params = [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 1)),
              rng.normal(size=1)]
    x = rng.normal(size=3)
    h = np.maximum(x @ params[0] + params[1], 0)
    assert np.allclose(mlp_forward_reference(params, x), h @ params[2] + params[3])
    h = np.tanh(x @ params[0] + params[1])
    assert np.allclose(mlp_forward_reference(params, x, "tanh"), h @ params[2] + params[3])


def test_primal_reference_limits():
    pol = Gaussian([0.0], [[1.0]])
    sym = constrained_guide_reference(pol, -np.eye(1), np.zeros(1), 0.0, 0.05, -5.0)
    assert abs(sym.gaussian.mean[0]) < 1e-6
    H, psi = -np.array([[2.0]]), np.array([1.0])
    loose = constrained_guide_reference(pol, H, psi, 0.0, 50.0, -50.0)
    assert abs(loose.gaussian.mean[0] - 0.5) < 1e-4
    with pytest.raises(ValueError):
        constrained_guide_reference(pol, np.eye(1), psi, 0.0, 0.1, 0.0)


def test_primal_matches_dual_in_one_dimension():
    H, psi = -np.array([[1.3]]), np.array([0.7])
    pol = Gaussian([0.2], [[0.5]])
    eps, kappa = 0.05, gauss_entropy(pol) - 0.1
    ref = constrained_guide_reference(pol, H, psi, 0.0, eps, kappa)
    q = QuadraticCritic(H, psi)
    tm = taylor_at(q, np.zeros((1, 1)), pol.mean[None], lambda S, A: H[None])
    sol = solve_dual(tm, pol.mean[None], pol.cov, eps, kappa)
    g = guide_from_dual(tm, pol.mean[None], pol.cov, sol.eta, sol.omega).entry(0)
    assert np.abs(ref.gaussian.mean - g.mean).max() < 2e-3
    assert np.abs(ref.gaussian.cov - g.cov).max() < 2e-3
