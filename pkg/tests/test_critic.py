import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gac.actor import GaussianPolicy
from gac.critic import (CriticNetwork, QuadraticCritic, TargetCritic, bellman_targets,
                        critic_update, gauss_newton_hessian, q_grad_action, q_value,
                        quadratic_critic, regress, target_sync)
from gac.errors import DimensionMismatch, EmptyBatch
from gac.oracle import fd_gradient, mlp_forward_reference
from gac.replay import Batch
from gac.verify import check_critic_grad, check_gauss_newton


def test_zero_network_is_zero(rng):
    net = CriticNetwork(2, 1, rng=rng)
    for p in net.params:
        p[:] = 0.0
    assert q_value(net, [1.0, 2.0], [0.3]) == 0.0
    assert np.array_equal(q_grad_action(net, [1.0, 2.0], [0.3]), [0.0])


def test_affine_network():
    net = CriticNetwork(2, 1, hidden=())
    net.params[0][:] = np.array([[1.0], [2.0], [3.0]])
    net.params[1][:] = 0.5
    assert np.isclose(q_value(net, [1.0, 1.0], [2.0]), 1 + 2 + 6 + 0.5)
    assert np.allclose(q_grad_action(net, [1.0, 1.0], [2.0]), [3.0])


def test_forward_matches_duplicate_reference(rng):
    net = CriticNetwork(3, 2, hidden=(16, 8), rng=rng)
    s, a = rng.normal(size=3), rng.normal(size=2)
    ref = mlp_forward_reference(net.params, np.concatenate([s, a]))[0]
    assert np.isclose(q_value(net, s, a), ref, atol=1e-14)


def test_batched_and_broadcast_shapes(rng):
    net = CriticNetwork(3, 2, rng=rng)
    S, A = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    assert net.value(S, A).shape == (5,)
    assert net.grad_action(S, A).shape == (5, 2)
    assert net.value(S[0], A).shape == (5,)
    with pytest.raises(DimensionMismatch):
        net.value(S, A[:3])
    with pytest.raises(DimensionMismatch):
        net.value(S, np.zeros((5, 3)))


def test_quadratic_adapter():
    q = quadratic_critic(-np.eye(2), np.zeros(2), 0.0)
    assert q_value(q, None, [1.0, 1.0]) == -1.0
    a = np.array([0.3, -0.7])
    assert np.allclose(q_grad_action(q, None, a), -a)
    H = np.array([[-2.0, 0.5], [0.5, -1.0]])
    psi = np.array([1.0, -1.0])
    q = QuadraticCritic(H, psi, 3.0)
    assert np.allclose(q.grad_action(None, a), H @ a + psi)
    with pytest.raises(ValueError):
        QuadraticCritic(np.array([[1.0, 2.0], [0.0, 1.0]]), psi)


def test_naf_gradient_vanishes_at_b():
    W = lambda s: -np.diag([1.0 + s[0] ** 2, 2.0])
    b = lambda s: np.array([np.sin(s[0]), s[1]])
    q = QuadraticCritic.naf(W, b, lambda s: s @ s)
    s = np.array([0.4, -1.2])
    assert np.allclose(q.grad_action(s, b(s)), 0.0, atol=1e-14)
    assert np.isclose(q.value(s, b(s)), s @ s)


def test_gauss_newton_examples(rng):
    assert np.array_equal(gauss_newton_hessian(np.zeros(3)), np.zeros((3, 3)))
    assert np.array_equal(gauss_newton_hessian([1.0, 2.0]), [[-1, -2], [-2, -4]])
    G = gauss_newton_hessian(rng.normal(size=(10, 4)))
    assert G.shape == (10, 4, 4)
    assert np.all(np.linalg.eigvalsh(G) <= 1e-12)


def test_bellman_target_arithmetic():
    class Fixed:
        def value(self, S, A):
            return A[:, 0]
    acts = np.array([[[0.5], [1.5]], [[0.5], [1.5]]])
    y = bellman_targets(Fixed(), [1.0, -1.0], np.zeros((2, 1)), np.array([False, True]),
                        acts, 0.99)
    assert np.isclose(y[0], 1.99)
    assert y[1] == -1.0


def test_target_sync_rules(rng):
    net = CriticNetwork(2, 1, rng=rng)
    tgt = TargetCritic(net)
    assert all(np.array_equal(a, b) for a, b in zip(net.params, tgt.params))
    target_sync(net, tgt, 0.5)
    assert all(np.array_equal(a, b) for a, b in zip(net.params, tgt.params))
    for p in net.params:
        p += 1.0
    gap0 = [p - q for p, q in zip(net.params, tgt.params)]
    for _ in range(7):
        target_sync(net, tgt, 0.001)
    for g0, p, q in zip(gap0, net.params, tgt.params):
        assert np.allclose(p - q, g0 * 0.999 ** 7, atol=1e-14)
    target_sync(net, tgt, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(net.params, tgt.params))
    with pytest.raises(ValueError):
        target_sync(net, tgt, 0.0)


def test_regression_reduces_error_tenfold(rng):
    net = CriticNetwork(2, 1, hidden=(64, 64), rng=rng)
    S, A = rng.uniform(-1, 1, (256, 2)), rng.uniform(-1, 1, (256, 1))
    y = -(S ** 2).sum(1) - A[:, 0] ** 2 + 0.5 * S[:, 0] * A[:, 0]
    first = regress(net, S, A, y)
    for _ in range(2000):
        last = regress(net, S, A, y)
    assert last < first / 10


def test_critic_update_terminal_and_empty(rng):
    net = CriticNetwork(1, 1, rng=rng)
    tgt = TargetCritic(net)
    actor = GaussianPolicy(1, 1, [-1.0], [1.0], rng=rng)
    b = Batch(np.zeros((2, 1)), np.zeros((2, 1)), np.array([-1.0, -1.0]),
              np.zeros((2, 1)), np.array([True, True]))
    for p in net.params:
        p[:] = 0.0
    loss = critic_update(net, tgt, b, actor, 3, 0.99, rng)
    assert np.isclose(loss, 1.0)
    empty = Batch(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)),
                  np.zeros(0, dtype=bool))
    with pytest.raises(EmptyBatch):
        critic_update(net, tgt, empty, actor, 3, 0.99, rng)
    with pytest.raises(ValueError):
        critic_update(net, tgt, b, actor, 0, 0.99, rng)


def test_tensors_round_trip(rng):
    for act in ("relu", "tanh"):
        net = CriticNetwork(3, 2, rng=rng, activation=act)
        back = CriticNetwork.from_tensors(net.tensors())
        S, A = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        assert np.array_equal(back.value(S, A), net.value(S, A))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_action_gradient_property(da, ds, seed):
    r = np.random.default_rng(seed)
    net = CriticNetwork(ds, da, hidden=(12, 12), rng=r)
    net.params[-2][:] = r.normal(size=net.params[-2].shape)
    s, a = r.normal(size=ds), r.uniform(-1, 1, da)
    zs = net.preactivations(s, a)
    if min(np.abs(z).min() for z in zs) < 1e-4:
        return  # too close to a kink for a clean difference quotient
    g = net.grad_action(s, a)
    fd = fd_gradient(lambda x: net.value(s, x), a, 1e-6)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def test_gradient_suite_passes():
    assert check_critic_grad(seed=3, n=30).passed


def test_gauss_newton_suite_passes():
    assert check_gauss_newton(seed=3, n=12).passed
