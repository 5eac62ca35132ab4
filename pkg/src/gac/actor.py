"""Gaussian actor N(a | phi_theta(s), Sigma) and its supervised fitting rules.

The mean network has ReLU hidden layers and a tanh output rescaled to the
action box, so ``phi_theta(s)`` is always a feasible action. ``Sigma`` is
shared by all states.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, ShapeMismatch
from .gaussmath import Gaussian, gauss_entropy, spd_factor, spd_inverse
from .nn import MLP, Adam


class GaussianPolicy:
    def __init__(self, state_dim: int, action_dim: int, low, high, hidden=(64, 64),
                 rng: np.random.Generator | None = None, lr: float = 1e-4,
                 init_cov=None, output_init: float = 0.003):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.low = np.broadcast_to(np.asarray(low, dtype=np.float64), (self.action_dim,)).copy()
        self.high = np.broadcast_to(np.asarray(high, dtype=np.float64), (self.action_dim,)).copy()
        if not np.all(self.low < self.high):
            raise ValueError("action box needs low < high")
        self.net = MLP([self.state_dim, *hidden, self.action_dim], rng=rng,
                       output_init=output_init)
        self.optimizer = Adam(self.net.params, lr)
        self.Sigma = np.eye(self.action_dim) if init_cov is None else np.array(init_cov, dtype=np.float64)
        spd_factor(self.Sigma)

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.high + self.low)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def _states(self, states):
        S = np.asarray(states, dtype=np.float64)
        single = S.ndim <= 1
        S = S.reshape(1, -1) if single else S
        if S.shape[1] != self.state_dim:
            raise DimensionMismatch(f"state width {S.shape[1]}, expected {self.state_dim}")
        return S, single

    def _forward(self, S):
        z, cache = self.net.forward(S)
        t = np.tanh(z)
        return self.center + self.half_width * t, (cache, t)

    def mean(self, states):
        S, single = self._states(states)
        phi, _ = self._forward(S)
        return phi[0] if single else phi

    def vjp(self, states, v) -> list[np.ndarray]:
        """sum_n J_n' v_n, with J_n the Jacobian of phi_theta(s_n) w.r.t. the parameters."""
        S, _ = self._states(states)
        _, (cache, t) = self._forward(S)
        v = np.asarray(v, dtype=np.float64).reshape(S.shape[0], self.action_dim)
        _, grads = self.net.backward(cache, v * self.half_width * (1.0 - t * t))
        return grads

    def distribution(self, state) -> Gaussian:
        return Gaussian(self.mean(state), self.Sigma)

    def entropy(self) -> float:
        return gauss_entropy(Gaussian(np.zeros(self.action_dim), self.Sigma))

    def clip(self, actions):
        return np.clip(actions, self.low, self.high)

    def act(self, state, rng: np.random.Generator | None = None, explore: bool = True):
        mu = self.mean(state)
        if not explore:
            return mu
        L = spd_factor(self.Sigma)
        return self.clip(mu + rng.standard_normal(mu.shape) @ L.T)

    def sample_actions(self, states, rng: np.random.Generator, M: int) -> np.ndarray:
        """(N, M, d) clipped draws from the policy at each state."""
        S, _ = self._states(states)
        mu = self.mean(S)
        L = spd_factor(self.Sigma)
        z = rng.standard_normal((S.shape[0], M, self.action_dim))
        return self.clip(mu[:, None, :] + z @ L.T)

    def tensors(self) -> dict[str, np.ndarray]:
        out = self.net.tensors("actor.")
        out["actor.Sigma"] = self.Sigma
        out["actor.low"] = self.low
        out["actor.high"] = self.high
        return out

    @classmethod
    def from_tensors(cls, tensors, lr: float = 1e-4) -> "GaussianPolicy":
        obj = cls.__new__(cls)
        obj.net = MLP.from_tensors(tensors, "actor.")
        obj.state_dim = obj.net.sizes[0]
        obj.action_dim = obj.net.sizes[-1]
        obj.low = np.array(tensors["actor.low"], dtype=np.float64).reshape(obj.action_dim)
        obj.high = np.array(tensors["actor.high"], dtype=np.float64).reshape(obj.action_dim)
        obj.Sigma = np.array(tensors["actor.Sigma"], dtype=np.float64).reshape(
            obj.action_dim, obj.action_dim)
        obj.optimizer = Adam(obj.net.params, lr)
        return obj


def policy_mean(p: GaussianPolicy, s):
    return p.mean(s)


def act(p: GaussianPolicy, s, rng=None, explore: bool = True):
    return p.act(s, rng, explore)


def _check_batch(p, states, targets):
    S, _ = p._states(states)
    T = np.asarray(targets, dtype=np.float64).reshape(-1, p.action_dim)
    if S.shape[0] == 0:
        raise EmptyBatch("empty batch")
    if T.shape[0] != S.shape[0]:
        raise DimensionMismatch(f"{S.shape[0]} states but {T.shape[0]} targets")
    return S, T


def mse_loss_and_grad(p: GaussianPolicy, states, guide_means):
    """0.5 * mean ||phi(s) - phi_+(s)||^2 and its parameter gradient."""
    S, T = _check_batch(p, states, guide_means)
    r = p.mean(S) - T
    loss = 0.5 * float(np.mean(np.sum(r * r, axis=1)))
    grads = p.vjp(S, r / S.shape[0])
    return loss, grads


def fit_mse(p: GaussianPolicy, states, guide_means, lr: float | None = None) -> float:
    """One Adam step on the MSE to fixed guide means; returns the pre-step loss."""
    loss, grads = mse_loss_and_grad(p, states, guide_means)
    if lr is not None:
        p.optimizer.lr = lr
    p.optimizer.step(grads)
    return loss


def guide_precisions(guides, duals) -> np.ndarray:
    """F(s) = (eta + omega) Sigma_+(s)^-1 for every guide."""
    return (duals.eta + duals.omega) * spd_inverse(guides.covs)


def wmse_loss_and_grad(p: GaussianPolicy, states, guide_means, weights):
    """mean (phi - phi_+)' F (phi - phi_+) and its gradient, ``weights`` is (N, d, d)."""
    S, T = _check_batch(p, states, guide_means)
    W = np.asarray(weights, dtype=np.float64)
    if W.shape != (S.shape[0], p.action_dim, p.action_dim):
        raise DimensionMismatch(f"weights have shape {W.shape}")
    r = p.mean(S) - T
    Wr = np.einsum("nij,nj->ni", W, r)
    loss = float(np.mean(np.sum(r * Wr, axis=1)))
    grads = p.vjp(S, 2.0 * Wr / S.shape[0])
    return loss, grads


def fit_wmse(p: GaussianPolicy, states, guides, duals, lr: float | None = None) -> float:
    """One Adam step on the F(s)-weighted squared error; returns the pre-step loss."""
    F = guide_precisions(guides, duals)
    spd_factor(F)
    loss, grads = wmse_loss_and_grad(p, states, guides.means, F)
    if lr is not None:
        p.optimizer.lr = lr
    p.optimizer.step(grads)
    return loss


def update_covariance(p: GaussianPolicy, guides) -> np.ndarray:
    """Sigma <- mean of the guide covariances."""
    covs = np.asarray(guides.covs, dtype=np.float64)
    if covs.shape[0] == 0:
        raise EmptyBatch("no guides")
    if covs.shape[1:] != (p.action_dim, p.action_dim):
        raise ShapeMismatch(f"guide covariances have shape {covs.shape[1:]}")
    S = covs.mean(axis=0)
    S = 0.5 * (S + S.T)
    spd_factor(S)
    p.Sigma = S
    return S
