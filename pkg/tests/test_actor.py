import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gac.actor import (GaussianPolicy, act, fit_mse, fit_wmse, guide_precisions,
                       mse_loss_and_grad, policy_mean, update_covariance, wmse_loss_and_grad)
from gac.errors import DimensionMismatch, EmptyBatch, NotPositiveDefinite
from gac.guide import DualSolution, GuideBatch
from gac.oracle import fd_gradient, mlp_forward_reference

from conftest import random_spd


def make(rng, ds=3, da=2, hidden=(16, 16), **kw):
    return GaussianPolicy(ds, da, -2.0 * np.ones(da), 2.0 * np.ones(da), hidden=hidden,
                          rng=rng, **kw)


def flat_grad(grads):
    return np.concatenate([g.ravel() for g in grads])


def with_flat(p, theta, fn):
    old = p.net.get_flat()
    p.net.set_flat(theta)
    try:
        return fn()
    finally:
        p.net.set_flat(old)


def test_zero_network_gives_box_center(rng):
    p = GaussianPolicy(2, 2, [-1.0, 0.0], [3.0, 4.0], rng=rng)
    for w in p.params:
        w[:] = 0.0
    assert np.array_equal(policy_mean(p, [0.3, -0.2]), [1.0, 2.0])


def test_means_stay_inside_box(rng):
    p = make(rng)
    for w in p.params:
        w *= 50.0
    A = p.mean(rng.normal(scale=10.0, size=(10_000, 3)))
    assert np.all(A >= -2.0) and np.all(A <= 2.0)


def test_mean_matches_reference_forward(rng):
    p = make(rng)
    for w in p.params:
        w[:] = rng.normal(size=w.shape) * 0.5
    s = rng.normal(size=3)
    ref = 2.0 * np.tanh(mlp_forward_reference(p.params, s))
    assert np.allclose(p.mean(s), ref, atol=1e-14)


def test_initial_covariance_is_identity(rng):
    assert np.array_equal(make(rng).Sigma, np.eye(2))


def test_act_without_exploration_is_the_mean(rng):
    p = make(rng)
    s = rng.normal(size=3)
    assert np.array_equal(act(p, s, explore=False), p.mean(s))


def test_exploration_std_and_determinism(rng):
    p = make(rng, hidden=())
    for w in p.params:
        w[:] = 0.0
    p.Sigma = 0.01 * np.eye(2)
    S = np.zeros((100_000, 3))
    A = p.sample_actions(S, np.random.default_rng(5), 1)[:, 0, :]
    assert np.all(np.abs(A.std(axis=0) / 0.1 - 1) < 0.05)
    a1 = p.act(np.zeros(3), np.random.default_rng(9))
    a2 = p.act(np.zeros(3), np.random.default_rng(9))
    assert np.array_equal(a1, a2)


def test_sampled_actions_are_clipped(rng):
    p = make(rng)
    p.Sigma = 100.0 * np.eye(2)
    A = p.sample_actions(rng.normal(size=(50, 3)), rng, 20)
    assert A.shape == (50, 20, 2)
    assert A.min() >= -2.0 and A.max() <= 2.0


def test_dimension_checks(rng):
    p = make(rng)
    with pytest.raises(DimensionMismatch):
        p.mean(np.zeros(4))
    with pytest.raises(EmptyBatch):
        fit_mse(p, np.zeros((0, 3)), np.zeros((0, 2)))
    with pytest.raises(DimensionMismatch):
        fit_mse(p, np.zeros((3, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        GaussianPolicy(1, 1, 1.0, 1.0)


def test_tensor_round_trip(rng):
    p = make(rng)
    p.Sigma = random_spd(rng, 2)
    q = GaussianPolicy.from_tensors(p.tensors())
    S = rng.normal(size=(4, 3))
    assert np.array_equal(p.mean(S), q.mean(S))
    assert np.array_equal(p.Sigma, q.Sigma)


# --- MSE ------------------------------------------------------------------------------

def test_mse_zero_at_current_means(rng):
    p = make(rng)
    S = rng.normal(size=(8, 3))
    loss, grads = mse_loss_and_grad(p, S, p.mean(S))
    assert loss == 0.0
    assert np.all(flat_grad(grads) == 0.0)


def test_mse_gradient_single_parameter():
    # phi = 2 tanh(w s): dL/dw = (phi - target) * 2 (1 - tanh^2) s
    p = GaussianPolicy(1, 1, -2.0, 2.0, hidden=())
    p.params[0][:] = 0.4
    p.params[1][:] = 0.0
    s, target = 1.5, 0.3
    loss, grads = mse_loss_and_grad(p, [[s]], [[target]])
    t = np.tanh(0.4 * s)
    assert np.isclose(grads[0][0, 0], (2 * t - target) * 2 * (1 - t * t) * s, rtol=1e-14)
    assert np.isclose(loss, 0.5 * (2 * t - target) ** 2)


def test_mse_gradient_matches_finite_differences(rng):
    p = make(rng)
    S, T = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    _, grads = mse_loss_and_grad(p, S, T)
    theta = p.net.get_flat()
    fd = fd_gradient(lambda th: with_flat(p, th, lambda: mse_loss_and_grad(p, S, T)[0]), theta)
    assert np.allclose(flat_grad(grads), fd, atol=1e-7)


def test_fit_mse_reaches_least_squares_for_linear_actor(rng):
    # targets inside the tanh range: the fit reaches the exact preimage
    p = GaussianPolicy(2, 1, -2.0, 2.0, hidden=(), rng=rng, lr=1e-2)
    S = rng.normal(size=(32, 2))
    w_true, b_true = np.array([0.3, -0.2]), 0.1
    T = 2.0 * np.tanh(S @ w_true + b_true)[:, None]
    for _ in range(20_000):
        fit_mse(p, S, T)
    assert np.allclose(p.params[0][:, 0], w_true, atol=1e-6)
    assert np.allclose(p.params[1], b_true, atol=1e-6)


def test_fit_mse_decreases_loss_for_small_steps():
    for seed in range(50):
        r = np.random.default_rng(seed)
        p = make(r, lr=1e-5)
        S, T = r.normal(size=(8, 3)), r.normal(size=(8, 2))
        before = fit_mse(p, S, T)
        after, _ = mse_loss_and_grad(p, S, T)
        assert after < before


# --- WMSE -----------------------------------------------------------------------------

def test_identity_weights_double_the_mse(rng):
    p = make(rng)
    S, T = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    W = np.broadcast_to(np.eye(2), (6, 2, 2))
    mse, _ = mse_loss_and_grad(p, S, T)
    wmse, _ = wmse_loss_and_grad(p, S, T, W)
    assert np.isclose(wmse, 2 * mse, rtol=1e-14)


def test_diagonal_weights_scale_coordinates(rng):
    p = make(rng)
    for w in p.params:
        w[:] = 0.0
    W = np.diag([4.0, 1.0])[None]
    l1, _ = wmse_loss_and_grad(p, np.zeros((1, 3)), [[0.5, 0.0]], W)
    l2, _ = wmse_loss_and_grad(p, np.zeros((1, 3)), [[0.0, 0.5]], W)
    assert np.isclose(l1, 4 * l2)


def test_wmse_gradient_matches_finite_differences(rng):
    p = make(rng)
    S, T = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    W = np.stack([random_spd(rng, 2) for _ in range(5)])
    _, grads = wmse_loss_and_grad(p, S, T, W)
    fd = fd_gradient(
        lambda th: with_flat(p, th, lambda: wmse_loss_and_grad(p, S, T, W)[0]),
        p.net.get_flat())
    assert np.abs(flat_grad(grads) - fd).max() < 1e-6


def test_fit_wmse_uses_scaled_guide_precision(rng):
    p = make(rng)
    S = rng.normal(size=(4, 3))
    covs = np.stack([random_spd(rng, 2) for _ in range(4)])
    guides = GuideBatch(rng.normal(size=(4, 2)), covs)
    duals = DualSolution(eta=2.0, omega=0.5, dual_value=0.0,
                         iterations=0, converged=True)
    F = guide_precisions(guides, duals)
    assert np.allclose(F[0] @ covs[0], 2.5 * np.eye(2))
    expected, _ = wmse_loss_and_grad(p, S, guides.means, F)
    assert np.isclose(fit_wmse(p, S, guides, duals), expected)
    bad = GuideBatch(guides.means, -covs)
    with pytest.raises(NotPositiveDefinite):
        fit_wmse(p, S, bad, duals)


# --- covariance -------------------------------------------------------------------------

def test_covariance_update_is_the_average(rng):
    p = make(rng)
    C = random_spd(rng, 2)
    update_covariance(p, GuideBatch(np.zeros((3, 2)), np.stack([C] * 3)))
    assert np.allclose(p.Sigma, C, atol=1e-15)
    update_covariance(p, GuideBatch(np.zeros((2, 2)), np.stack([np.eye(2), 3 * np.eye(2)])))
    assert np.array_equal(p.Sigma, 2 * np.eye(2))
    with pytest.raises(EmptyBatch):
        update_covariance(p, GuideBatch(np.zeros((0, 2)), np.zeros((0, 2, 2))))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_average_of_spd_guides_is_spd(d, n, seed):
    r = np.random.default_rng(seed)
    p = GaussianPolicy(2, d, -np.ones(d), np.ones(d), hidden=(), rng=r)
    covs = np.stack([random_spd(r, d, 1e-3, 10.0) for _ in range(n)])
    S = update_covariance(p, GuideBatch(np.zeros((n, d)), covs))
    assert np.all(np.linalg.eigvalsh(S) > 0)
    assert np.array_equal(S, S.T)
