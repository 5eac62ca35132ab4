"""Small deterministic control tasks.

=========  =====  =====  ==========  =======  ==========================================
name       state  action  box         horizon  dynamics
=========  =====  =====  ==========  =======  ==========================================
lqr1d      1      1      [-2, 2]     25       s' = s + a, cost s^2 + a^2
lqr2d      2      2      [-2, 2]^2   25       A = [[1, .2], [0, 1]], B = Q = R = I
pendulum   3      1      [-2, 2]     200      theta = 0 upright, obs (cos, sin, thetadot)
reacher2d  6      2      [-1, 1]^2   200      double integrator, obs (pos, vel, goal)
=========  =====  =====  ==========  =======  ==========================================

Episodes end only at the horizon. Reaching the horizon sets ``truncated``,
never ``terminal``: the task itself goes on, so the critic keeps
bootstrapping through it. ``terminal`` is reserved for true absorbing
states, which none of these tasks have.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NonFiniteState


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    low: np.ndarray
    high: np.ndarray
    horizon: int
    reward: str = ""

    def __post_init__(self):
        if not np.all(np.asarray(self.low) < np.asarray(self.high)):
            raise ValueError("low < high required per coordinate")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    reward: float
    terminal: bool = False
    truncated: bool = False

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class Env:
    """Base class: subclasses define ``spec``, ``_initial``, ``_transition``, ``observe``."""

    spec: EnvSpec

    def __init__(self, noise_std: float = 0.0):
        self.noise_std = float(noise_std)
        self.rng = np.random.default_rng(0)
        self.t = 0
        self.x = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.x = self._initial(self.rng)
        self.t = 0
        return self.observe()

    def step(self, action) -> StepResult:
        if self.x is None:
            raise RuntimeError("call reset() before step()")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        x_next, reward = self._transition(self.x, a)
        if self.noise_std > 0.0:
            x_next = x_next + self.noise_std * self.rng.standard_normal(x_next.shape)
        if not (np.all(np.isfinite(x_next)) and np.isfinite(reward)):
            raise NonFiniteState(f"{self.spec.name}: non-finite state at t={self.t}")
        self.x = x_next
        self.t += 1
        return StepResult(self.observe(), float(reward), False, self.t >= self.spec.horizon)

    def observe(self) -> np.ndarray:
        return self.x.copy()


class LQREnv(Env):
    """s' = A s + B a, reward -(s'Qs + a'Ra); initial state uniform in [-1, 1]^d."""

    def __init__(self, A, B, Q, R, bound: float = 2.0, horizon: int = 25,
                 name: str = "lqr", noise_std: float = 0.0):
        super().__init__(noise_std)
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        ds, da = self.B.shape
        self.spec = EnvSpec(name, ds, da, -bound * np.ones(da), bound * np.ones(da),
                            horizon, "-(s'Qs + a'Ra)")

    def _initial(self, rng):
        return rng.uniform(-1.0, 1.0, self.spec.state_dim)

    def _transition(self, s, a):
        r = -(s @ self.Q @ s + a @ self.R @ a)
        return self.A @ s + self.B @ a, r


class PendulumEnv(Env):
    """Torque-driven pendulum, theta = 0 upright, semi-implicit Euler.

    Internal state (theta, thetadot); observation (cos theta, sin theta, thetadot).
    Reward -(wrap(theta)^2 + 0.1 thetadot^2 + 0.001 u^2) on the pre-step state.
    """

    g, m, l, dt = 10.0, 1.0, 1.0, 0.05
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self, horizon: int = 200, noise_std: float = 0.0):
        super().__init__(noise_std)
        self.spec = EnvSpec("pendulum", 3, 1, np.array([-self.max_torque]),
                            np.array([self.max_torque]), horizon,
                            "-(theta^2 + 0.1 thetadot^2 + 0.001 u^2)")

    def _initial(self, rng):
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    def _transition(self, x, a):
        th, thd = x
        u = float(a[0])
        r = -(wrap_angle(th) ** 2 + 0.1 * thd ** 2 + 0.001 * u ** 2)
        thdd = self.g / self.l * np.sin(th) + u / (self.m * self.l ** 2)
        thd = float(np.clip(thd + self.dt * thdd, -self.max_speed, self.max_speed))
        return np.array([th + self.dt * thd, thd]), r

    def observe(self):
        th, thd = self.x
        return np.array([np.cos(th), np.sin(th), thd])

    def energy(self) -> float:
        th, thd = self.x
        return 0.5 * thd ** 2 + self.g / self.l * np.cos(th)

    def shadow_energy(self) -> float:
        """First-order modified energy conserved by the semi-implicit integrator.

        The mechanical energy itself oscillates by O(dt) within a swing.
        """
        th, thd = self.x
        return self.energy() + 0.5 * self.dt * thd * self.g / self.l * np.sin(th)


class ReacherEnv(Env):
    """Planar double integrator steering toward a random goal.

    v' = v + dt a, p' = p + dt v'; reward -||p - goal||^2 - 0.01 ||a||^2 on the
    pre-step position. Start position and goal uniform in [-1, 1]^2, zero velocity.
    """

    dt = 0.05

    def __init__(self, horizon: int = 200, noise_std: float = 0.0):
        super().__init__(noise_std)
        self.spec = EnvSpec("reacher2d", 6, 2, -np.ones(2), np.ones(2), horizon,
                            "-||p - goal||^2 - 0.01 ||a||^2")

    def _initial(self, rng):
        p = rng.uniform(-1.0, 1.0, 2)
        g = rng.uniform(-1.0, 1.0, 2)
        return np.concatenate([p, np.zeros(2), g])

    def _transition(self, x, a):
        p, v, g = x[:2], x[2:4], x[4:]
        diff = p - g
        r = -(diff @ diff) - 0.01 * (a @ a)
        v = v + self.dt * a
        p = p + self.dt * v
        return np.concatenate([p, v, g]), r


def wrap_angle(th):
    """Map to [-pi, pi)."""
    return (th + np.pi) % (2.0 * np.pi) - np.pi


ENV_NAMES = ("lqr1d", "lqr2d", "pendulum", "reacher2d")


def make_env(name: str, noise_std: float = 0.0, horizon: int | None = None) -> Env:
    kw = {} if horizon is None else {"horizon": int(horizon)}
    if name == "lqr1d":
        return LQREnv(1.0, 1.0, 1.0, 1.0, name="lqr1d", noise_std=noise_std, **kw)
    if name == "lqr2d":
        A = np.array([[1.0, 0.2], [0.0, 1.0]])
        return LQREnv(A, np.eye(2), np.eye(2), np.eye(2), name="lqr2d",
                      noise_std=noise_std, **kw)
    if name == "pendulum":
        return PendulumEnv(noise_std=noise_std, **kw)
    if name == "reacher2d":
        return ReacherEnv(noise_std=noise_std, **kw)
    raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")


def env_reset(env: Env, seed: int | None = None):
    return env.reset(seed)


def env_step(env: Env, action) -> StepResult:
    return env.step(action)


def riccati_step(P, A, B, Q, R, gamma):
    """One discounted Riccati backup; returns ``(P_next, K)`` with a = -K s."""
    BtP = B.T @ P
    G = R + gamma * BtP @ B
    K = gamma * np.linalg.solve(G, BtP @ A)
    P_next = Q + gamma * A.T @ P @ A - gamma * (A.T @ P @ B) @ K
    return 0.5 * (P_next + P_next.T), K


def lqr_optimal_gain(env: LQREnv, gamma: float, tol: float = 1e-12,
                     max_iter: int = 100_000, return_cost: bool = False):
    """Gain K of the optimal discounted controller a = -K s.

    Iterates the Riccati backup from P = Q until successive P agree to ``tol``
    (relative to max(1, |P|)). With ``return_cost`` also returns P, so that the
    optimal return from s is -s'Ps.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    A, B, Q, R = env.A, env.B, env.Q, env.R
    P = Q.copy()
    for _ in range(max_iter):
        P_next, K = riccati_step(P, A, B, Q, R, gamma)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, float(np.max(np.abs(P_next)))):
            _, K = riccati_step(P_next, A, B, Q, R, gamma)
            return (K, P_next) if return_cost else K
        P = P_next
    raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")
