"""Action-value critics.

Two implementations share a duck-typed interface used by the guide and
baselines modules::

    critic.value(states, actions)        -> (N,)
    critic.grad_action(states, actions)  -> (N, da)

:class:`CriticNetwork` is the learned ReLU network; :class:`QuadraticCritic`
is an exact quadratic used as an oracle and for the NAF special case.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionMismatch, EmptyBatch
from .nn import MLP, Adam


def _as_batch(x, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    x = np.atleast_2d(x) if x.ndim else x.reshape(1, 1)
    if x.shape[1] != width:
        raise DimensionMismatch(f"{what} has width {x.shape[1]}, expected {width}")
    return x, single


class CriticNetwork:
    """Q(s, a) as an MLP over the concatenated input ``[s; a]``."""

    def __init__(self, state_dim: int, action_dim: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None, activation: str = "relu",
                 lr: float = 1e-3):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.net = MLP([state_dim + action_dim, *hidden, 1],
                       activation=activation, rng=rng)
        self.optimizer = Adam(self.net.params, lr)

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params

    def _inputs(self, states, actions):
        S, single = _as_batch(states, self.state_dim, "state")
        A, _ = _as_batch(actions, self.action_dim, "action")
        if S.shape[0] != A.shape[0]:
            if S.shape[0] == 1:
                S = np.repeat(S, A.shape[0], axis=0)
            else:
                raise DimensionMismatch(
                    f"{S.shape[0]} states but {A.shape[0]} actions")
        return np.concatenate([S, A], axis=1), single and A.shape[0] == 1

    def value(self, states, actions):
        X, single = self._inputs(states, actions)
        q = self.net.predict(X)[:, 0]
        return float(q[0]) if single else q

    def grad_action(self, states, actions):
        X, single = self._inputs(states, actions)
        out, cache = self.net.forward(X)
        dX, _ = self.net.backward(cache, np.ones_like(out), want_params=False)
        g = dX[:, self.state_dim:]
        return g[0] if single else g

    def value_and_grad_action(self, states, actions):
        X, _ = self._inputs(states, actions)
        out, cache = self.net.forward(X)
        dX, _ = self.net.backward(cache, np.ones_like(out), want_params=False)
        return out[:, 0], dX[:, self.state_dim:]

    def preactivations(self, states, actions) -> list[np.ndarray]:
        X, _ = self._inputs(states, actions)
        return self.net.preactivations(X)

    def tensors(self) -> dict[str, np.ndarray]:
        out = self.net.tensors("critic.")
        out["critic.action_dim"] = np.array(float(self.action_dim))
        out["critic.tanh"] = np.array(float(self.net.activation == "tanh"))
        return out

    @classmethod
    def from_tensors(cls, tensors, lr: float = 1e-3) -> "CriticNetwork":
        tanh = "critic.tanh" in tensors and float(tensors["critic.tanh"]) != 0.0
        net = MLP.from_tensors(tensors, "critic.", activation="tanh" if tanh else "relu")
        obj = cls.__new__(cls)
        obj.net = net
        obj.action_dim = int(tensors["critic.action_dim"])
        obj.state_dim = net.sizes[0] - obj.action_dim
        obj.optimizer = Adam(net.params, lr)
        return obj


class TargetCritic(CriticNetwork):
    """Slowly tracking copy of a :class:`CriticNetwork`; never optimized directly."""

    def __init__(self, source: CriticNetwork):
        self.state_dim = source.state_dim
        self.action_dim = source.action_dim
        self.net = source.net.copy()
        self.optimizer = None


class QuadraticCritic:
    """Q(s, a) = 0.5 a'H a + a'psi + xi with optional state-dependent terms.

    ``H``, ``psi`` and ``xi`` are either constants or callables of a single
    state vector.
    """

    def __init__(self, H, psi, xi=0.0):
        self._H, self._psi, self._xi = H, psi, xi
        self.action_dim = None
        if not callable(H):
            H0 = self._H_at(None)
            tol = 1e-12 * max(1.0, float(np.abs(H0).max()))
            if not np.allclose(H0, H0.T, rtol=0.0, atol=tol):
                raise ValueError("H must be symmetric")
            self.action_dim = H0.shape[0]
        elif not callable(psi):
            self.action_dim = self._psi_at(None).size

    @classmethod
    def naf(cls, W, b, V=0.0) -> "QuadraticCritic":
        """0.5 (a - b(s))' W(s) (a - b(s)) + V(s), expanded into quadratic form."""
        def pick(f, s):
            return f(s) if callable(f) else f

        def H(s):
            return np.atleast_2d(np.asarray(pick(W, s), dtype=np.float64))

        def psi(s):
            return -H(s) @ np.atleast_1d(np.asarray(pick(b, s), dtype=np.float64))

        def xi(s):
            bb = np.atleast_1d(np.asarray(pick(b, s), dtype=np.float64))
            return 0.5 * bb @ H(s) @ bb + float(pick(V, s))

        return cls(H, psi, xi)

    def _H_at(self, s) -> np.ndarray:
        H = self._H(s) if callable(self._H) else self._H
        return np.atleast_2d(np.asarray(H, dtype=np.float64))

    def _psi_at(self, s) -> np.ndarray:
        psi = self._psi(s) if callable(self._psi) else self._psi
        return np.atleast_1d(np.asarray(psi, dtype=np.float64))

    def _xi_at(self, s) -> float:
        return float(self._xi(s) if callable(self._xi) else self._xi)

    def terms(self, states):
        """Stacked ``(H, psi, xi)`` for a batch of states."""
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        n = S.shape[0]

        def stack(term, at, shape):
            if callable(term):
                return np.stack([at(s) for s in S]) if shape else np.array([at(s) for s in S])
            return np.broadcast_to(at(None), (n, *shape))

        H0 = self._H_at(S[0]) if n else self._H_at(None)
        H = stack(self._H, self._H_at, H0.shape)
        psi = stack(self._psi, self._psi_at, (H0.shape[0],))
        xi = stack(self._xi, self._xi_at, ())
        return H, psi, xi

    def _prep(self, states, actions):
        A = np.asarray(actions, dtype=np.float64)
        single = A.ndim <= 1
        A = np.atleast_2d(A)
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if S.shape[0] == 1 and A.shape[0] > 1:
            S = np.repeat(S, A.shape[0], axis=0)
        if S.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"{S.shape[0]} states but {A.shape[0]} actions")
        H, psi, xi = self.terms(S)
        if H.shape[1] != A.shape[1]:
            raise DimensionMismatch(f"action width {A.shape[1]} vs H {H.shape[1:]}")
        return S, A, H, psi, xi, single

    def value(self, states, actions):
        _, A, H, psi, xi, single = self._prep(states, actions)
        q = 0.5 * np.einsum("ni,nij,nj->n", A, H, A) + np.sum(A * psi, axis=1) + xi
        return float(q[0]) if single else q

    def grad_action(self, states, actions):
        _, A, H, psi, _, single = self._prep(states, actions)
        g = np.einsum("nij,nj->ni", H, A) + psi
        return g[0] if single else g

    def value_and_grad_action(self, states, actions):
        _, A, H, psi, xi, _ = self._prep(states, actions)
        q = 0.5 * np.einsum("ni,nij,nj->n", A, H, A) + np.sum(A * psi, axis=1) + xi
        return q, np.einsum("nij,nj->ni", H, A) + psi

    def hessian_action(self, states, actions):
        _, _, H, _, _, single = self._prep(states, actions)
        return H[0] if single else H


def quadratic_critic(H, psi, xi=0.0) -> QuadraticCritic:
    return QuadraticCritic(H, psi, xi)


def q_value(critic, s, a):
    return critic.value(s, a)


def q_grad_action(critic, s, a):
    return critic.grad_action(s, a)


def gauss_newton_hessian(g) -> np.ndarray:
    """-g g^T, or a stack of them for ``g`` of shape ``(N, d)``."""
    g = np.asarray(g, dtype=np.float64)
    return -g[..., :, None] * g[..., None, :]


def bellman_targets(target: CriticNetwork, rewards, next_states, terminals,
                    next_actions, gamma: float) -> np.ndarray:
    """y_n = r_n + gamma * mean_m Q_target(s'_n, a'_{n,m}), masked on terminals.

    ``next_actions`` has shape ``(N, M, da)``.
    """
    N, M, da = next_actions.shape
    S = np.repeat(np.asarray(next_states, dtype=np.float64), M, axis=0)
    q = target.value(S, next_actions.reshape(N * M, da)).reshape(N, M)
    boot = q.mean(axis=1)
    return np.asarray(rewards, dtype=np.float64) + gamma * np.where(terminals, 0.0, boot)


def critic_update(net: CriticNetwork, target: CriticNetwork, batch, actor, M: int,
                  gamma: float, rng: np.random.Generator, lr: float | None = None) -> float:
    """One Adam step on the squared Bellman error; returns the pre-step loss.

    Bootstrap actions are drawn from the actor at each next state and clipped
    to the action box, the same way executed actions are.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if M < 1:
        raise ValueError("M must be at least 1")
    N = len(batch.rewards)
    if N == 0:
        raise EmptyBatch("empty mini-batch")
    next_actions = actor.sample_actions(batch.next_states, rng, M)
    y = bellman_targets(target, batch.rewards, batch.next_states, batch.terminals,
                        next_actions, gamma)
    return regress(net, batch.states, batch.actions, y, lr)


def regress(net: CriticNetwork, states, actions, y, lr: float | None = None) -> float:
    """One Adam step on mean (Q(s, a) - y)^2 with ``y`` held constant."""
    X, _ = net._inputs(states, actions)
    out, cache = net.net.forward(X)
    resid = out[:, 0] - y
    loss = float(np.mean(resid * resid))
    dout = (2.0 / len(y)) * resid[:, None]
    _, grads = net.net.backward(cache, dout)
    if lr is not None:
        net.optimizer.lr = lr
    net.optimizer.step(grads)
    return loss


def target_sync(net: CriticNetwork, target: CriticNetwork, tau: float) -> None:
    """nu_bar <- tau * nu + (1 - tau) * nu_bar, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    for p, pt in zip(net.params, target.params):
        if p.shape != pt.shape:
            raise DimensionMismatch("target shape differs from source")
        if tau == 1.0:
            pt[...] = p
        else:
            pt *= 1.0 - tau
            pt += tau * p


HessianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
