"""Guide actors: Taylor models of the critic, the dual problem, and the
closed-form constrained Gaussian update.

Everything here is batched over states. A policy evaluated at a batch of
states is passed as ``means`` (N, d) plus one shared covariance ``cov``
(d, d), since the fitted actor's covariance is state independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .critic import gauss_newton_hessian
from .errors import DimensionMismatch, EmptyBatch, NotPositiveDefinite, SolverDiverged
from .gaussmath import Gaussian, logdet_from_factor, spd_factor, spd_inverse, LOG_2PI

ETA_MIN = 1e-10
OMEGA_MIN = 1e-10
ETA_INIT = 0.05
OMEGA_INIT = 0.05

MODES = ("GAC-0", "GAC-1", "GAC-S")


@dataclass
class TaylorModel:
    """Per-state quadratic ``0.5 a'H a + a'psi + xi`` anchored at ``a0``.

    ``a0`` is (N, d) for single-point models and (N, S, d) for averaged ones.
    """
    H: np.ndarray
    psi: np.ndarray
    xi: np.ndarray
    a0: np.ndarray

    def __len__(self):
        return self.psi.shape[0]

    @property
    def dim(self) -> int:
        return self.psi.shape[1]

    def value(self, actions) -> np.ndarray:
        A = np.asarray(actions, dtype=np.float64)
        return 0.5 * np.einsum("ni,nij,nj->n", A, self.H, A) + np.sum(A * self.psi, 1) + self.xi


@dataclass
class GuideBatch:
    """Guide Gaussians N(means[n], covs[n]), one per state."""
    means: np.ndarray
    covs: np.ndarray

    def __len__(self):
        return self.means.shape[0]

    def entry(self, n: int) -> Gaussian:
        return Gaussian(self.means[n], self.covs[n])


@dataclass
class DualSolution:
    eta: float
    omega: float
    dual_value: float
    iterations: int
    converged: bool
    kl: float = float("nan")
    entropy: float = float("nan")


@dataclass
class GuideConfig:
    epsilon: float = 1e-4
    kappa: float = -np.inf
    mode: str = "GAC-0"
    samples: int = 1
    hessian: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")


# --- Taylor models ------------------------------------------------------------

def taylor_at(critic, states, a0, hessian=None) -> TaylorModel:
    """Second-order model of ``critic`` around ``a0`` for each state.

    The curvature is the Gauss-Newton ``-g g'`` unless ``hessian(states, a0)``
    supplies one (used with exact quadratic critics).
    """
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    A0 = np.atleast_2d(np.asarray(a0, dtype=np.float64))
    if S.shape[0] != A0.shape[0]:
        raise DimensionMismatch(f"{S.shape[0]} states but {A0.shape[0]} expansion points")
    q, g = critic.value_and_grad_action(S, A0)
    H = gauss_newton_hessian(g) if hessian is None else np.asarray(hessian(S, A0), dtype=np.float64)
    if H.shape != (A0.shape[0], A0.shape[1], A0.shape[1]):
        raise DimensionMismatch(f"curvature has shape {H.shape}")
    Ha0 = np.einsum("nij,nj->ni", H, A0)
    psi = g - Ha0
    xi = 0.5 * np.sum(A0 * Ha0, axis=1) - np.sum(A0 * g, axis=1) + q
    return TaylorModel(np.ascontiguousarray(H), np.ascontiguousarray(psi), xi, A0)


def taylor_averaged(critic, states, means, cov, S: int, rng: np.random.Generator,
                    hessian=None) -> TaylorModel:
    """Average of ``S`` single-point models at actions drawn from N(means[n], cov)."""
    if S < 1:
        raise ValueError("S must be >= 1")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    N, d = means.shape
    L = spd_factor(cov)
    a0 = means[:, None, :] + rng.standard_normal((N, S, d)) @ L.T
    flat = taylor_at(critic, np.repeat(states, S, axis=0), a0.reshape(N * S, d), hessian)
    H = flat.H.reshape(N, S, d, d).mean(axis=1)
    psi = flat.psi.reshape(N, S, d).mean(axis=1)
    xi = flat.xi.reshape(N, S).mean(axis=1)
    return TaylorModel(H, psi, xi, a0)


# --- dual ----------------------------------------------------------------------

class _DualProblem:
    """Pre-factored inputs of the dual for one batch."""

    def __init__(self, tm: TaylorModel, means, cov):
        means = np.ascontiguousarray(np.atleast_2d(means), dtype=np.float64)
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        if means.shape != tm.psi.shape or cov.shape != (tm.dim, tm.dim):
            raise DimensionMismatch("policy and Taylor model dimensions disagree")
        if len(tm) == 0:
            raise EmptyBatch("no states")
        L = spd_factor(cov)
        self.tm = tm
        self.H = np.ascontiguousarray(tm.H, dtype=np.float64)
        self.psi = np.ascontiguousarray(tm.psi, dtype=np.float64)
        self.means = means
        self.cov = cov
        self.P = np.ascontiguousarray(spd_inverse(cov))
        self.logdet_2pi_sigma = float(logdet_from_factor(L)) + tm.dim * LOG_2PI

    def eval(self, eta, omega, eps, kappa):
        return kernels.dual_eval(self.H, self.psi, self.means, self.P,
                                 self.logdet_2pi_sigma, float(eta), float(omega),
                                 float(eps), float(kappa))


def dual_value(tm: TaylorModel, means, cov, eta, omega, eps, kappa) -> float:
    """Taylor-model dual at (eta, omega), without its additive constant.

    Adding ``tm.xi.mean()`` gives the exact log-integral dual when the
    critic is the quadratic itself.
    """
    if eta <= 0 or omega <= 0:
        raise ValueError("eta and omega must be positive")
    out = _DualProblem(tm, means, cov).eval(eta, omega, eps, kappa)
    if not out[-1]:
        raise NotPositiveDefinite(f"F(s) not positive definite at eta={eta}")
    return out[0]


def dual_grad(tm: TaylorModel, means, cov, eta, omega, eps, kappa) -> np.ndarray:
    """Gradient (d/d eta, d/d omega) = (eps - mean KL, mean entropy - kappa)."""
    out = _DualProblem(tm, means, cov).eval(eta, omega, eps, kappa)
    if not out[-1]:
        raise NotPositiveDefinite(f"F(s) not positive definite at eta={eta}")
    return np.array(out[1:3])


def dual_hessian(tm: TaylorModel, means, cov, eta, omega, eps, kappa) -> np.ndarray:
    out = _DualProblem(tm, means, cov).eval(eta, omega, eps, kappa)
    if not out[-1]:
        raise NotPositiveDefinite(f"F(s) not positive definite at eta={eta}")
    h_ee, h_eo, h_oo = out[3:6]
    return np.array([[h_ee, h_eo], [h_eo, h_oo]])


def solve_dual(tm: TaylorModel, means, cov, eps: float, kappa: float,
               eta0: float = ETA_INIT, omega0: float = OMEGA_INIT,
               eta_min: float = ETA_MIN, omega_min: float = OMEGA_MIN,
               gtol: float = 1e-6, kl_rtol: float = 1e-5,
               max_iter: int = 200) -> DualSolution:
    """Minimize the dual over eta >= eta_min, omega >= omega_min.

    Projected Newton iteration in (eta, omega) with the exact 2x2 Hessian and
    Armijo backtracking along the projection arc. The projected gradient is
    the pair of constraint residuals (eps - KL, entropy - kappa); it must drop
    below ``min(gtol, kl_rtol * eps)`` and ``gtol`` respectively. The KL
    tolerance is relative because eps itself is often 1e-4.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    prob = _DualProblem(tm, means, cov)
    tol_eta = min(gtol, kl_rtol * eps)
    eta, omega, f, ge, go, it, converged, ok = kernels.solve_dual(
        prob.H, prob.psi, prob.means, prob.P, prob.logdet_2pi_sigma,
        float(eps), float(kappa), float(eta0), float(omega0),
        float(eta_min), float(omega_min), float(tol_eta), float(gtol), int(max_iter))
    if not ok:
        raise SolverDiverged(f"dual is not finite at the starting point ({eta}, {omega})")
    return DualSolution(float(eta), float(omega), float(f), int(it), bool(converged),
                        float(eps - ge), float(go + kappa))


# --- guide actors ---------------------------------------------------------------

def guide_from_dual(tm: TaylorModel, means, cov, eta: float, omega: float) -> GuideBatch:
    """phi_+ = F^-1 L and Sigma_+ = (eta + omega) F^-1 with F = eta Sigma^-1 - H."""
    if not (eta > 0 and omega > 0):
        raise ValueError("eta and omega must be positive")
    means = np.ascontiguousarray(np.atleast_2d(means), dtype=np.float64)
    P = np.ascontiguousarray(spd_inverse(cov))
    if means.shape != tm.psi.shape or P.shape != (tm.dim, tm.dim):
        raise DimensionMismatch("policy and Taylor model dimensions disagree")
    H = np.ascontiguousarray(tm.H, dtype=np.float64)
    psi = np.ascontiguousarray(tm.psi, dtype=np.float64)
    mu, covs, ok = kernels.guide_moments(H, psi, means, P, float(eta), float(omega))
    if not ok:
        raise NotPositiveDefinite(f"F(s) not positive definite at eta={eta}")
    return GuideBatch(np.asarray(mu), np.asarray(covs))


def compute_guides(critic, means, cov, states, cfg: GuideConfig,
                   rng: np.random.Generator | None = None):
    """Taylor models per ``cfg.mode``, one shared dual solve, one guide per state.

    Returns ``(guides, solution, taylor_model)``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if states.shape[0] == 0:
        raise EmptyBatch("no states")
    if cfg.mode == "GAC-0":
        tm = taylor_at(critic, states, means, cfg.hessian)
    else:
        if rng is None:
            raise ValueError(f"{cfg.mode} needs a random generator")
        S = 1 if cfg.mode == "GAC-1" else cfg.samples
        tm = taylor_averaged(critic, states, means, cov, S, rng, cfg.hessian)
    sol = solve_dual(tm, means, cov, cfg.epsilon, cfg.kappa)
    guides = guide_from_dual(tm, means, cov, sol.eta, sol.omega)
    return guides, sol, tm
