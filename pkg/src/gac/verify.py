"""Numerical verification suites shared by ``gac verify`` and the test-suite.

Every check draws its random instances from a fixed seed, compares a
production code path against an independent reference from
:mod:`gac.oracle` (or closed-form algebra), and reports the worst error
seen against its tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .actor import GaussianPolicy, guide_precisions, mse_loss_and_grad, wmse_loss_and_grad
from .baselines import dpg_direction
from .critic import CriticNetwork, QuadraticCritic
from .envs import LQREnv, lqr_optimal_gain, make_env
from .gaussmath import Gaussian, gauss_entropy, gauss_kl, spd_factor
from .guide import (ETA_MIN, GuideConfig, compute_guides, dual_grad, dual_value,
                    guide_from_dual, solve_dual, taylor_at)
from .oracle import (ActionGrid, constrained_guide_reference, dual_quadrature,
                     entropy_quadrature, fd_gradient, fd_jacobian, kl_quadrature,
                     scalar_riccati)
from .trainer import evaluate


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    limit: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{status}  {self.name}: worst {self.worst:.3g} vs limit {self.limit:.3g}"
                f" in {self.seconds:.2f}s{extra}")


def _check(name, errors, limit, t0, detail="") -> Check:
    worst = float(np.max(errors)) if len(errors) else 0.0
    ok = bool(np.all(np.isfinite(errors))) and worst <= limit
    return Check(name, ok, worst, limit, time.perf_counter() - t0, detail)


def _rel(a, b, floor=1e-12) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def _random_spd(rng, d, lo=0.2, hi=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    m = Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T
    return 0.5 * (m + m.T)


def _random_nsd(rng, d, lo=0.2, hi=2.0):
    return -_random_spd(rng, d, lo, hi)


def _flat(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def _exact_hessian(critic):
    return lambda S, A: critic.hessian_action(S, A).reshape(len(S), A.shape[1], A.shape[1])


# --- gaussmath -----------------------------------------------------------------------

def check_gauss(seed: int = 0, n: int = 20) -> list[Check]:
    """gauss_kl and gauss_entropy against trapezoid quadrature, spd_factor round-trip."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n):
        d = 1 + i % 2
        p = Gaussian(rng.normal(0, 0.5, d), _random_spd(rng, d, 0.3, 1.5))
        q = Gaussian(rng.normal(0, 0.5, d), _random_spd(rng, d, 0.3, 1.5))
        grid = ActionGrid.around(p.mean, p.cov, n_std=12, resolution=2001 if d == 1 else 401)
        errs.append(abs(gauss_kl(p, q) - kl_quadrature(p.mean, p.cov, q.mean, q.cov, grid)))
        errs.append(abs(gauss_entropy(p) - entropy_quadrature(p.mean, p.cov, grid)))
    quad = _check("gauss: KL and entropy vs quadrature", errs, 1e-6, t0)
    t1 = time.perf_counter()
    trip = []
    for d in (2, 3, 5, 8):
        m = _random_spd(rng, d, 1e-3, 10.0)
        L = spd_factor(m)
        trip.append(np.abs(m - L @ L.T).max() / np.abs(m).max())
    return [quad, _check("gauss: spd_factor round-trip", trip, 1e-10, t1)]


# --- critic ---------------------------------------------------------------------------

def _kink_free(critic, s, a, h) -> bool:
    """True when no ReLU changes state within +-h of ``a`` along any action axis."""
    base = [z > 0 for z in critic.preactivations(s, a)]
    for i in range(a.size):
        for sign in (-1.0, 1.0):
            b = a.copy()
            b[i] += sign * h
            pats = [z > 0 for z in critic.preactivations(s, b)]
            if any(np.any(p != q) for p, q in zip(base, pats)):
                return False
    zs = critic.preactivations(s, a)
    return min(float(np.min(np.abs(z))) for z in zs) >= 1e-6


def check_critic_grad(seed: int = 0, n: int = 60, h: float = 1e-5) -> Check:
    """Reverse-mode action gradients of random ReLU critics vs central differences."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = []
    resampled = 0
    for i in range(n):
        da = (1, 2, 4)[i % 3]
        ds = int(rng.integers(1, 5))
        hidden = tuple(int(k) for k in rng.integers(4, 33, size=int(rng.integers(1, 3))))
        net = CriticNetwork(ds, da, hidden=hidden, rng=rng)
        net.net.params[-2][:] = rng.normal(0, 1, net.net.params[-2].shape)
        for p in net.net.params[1::2]:
            p[:] = rng.normal(0, 0.1, p.shape)
        while True:
            s, a = rng.normal(0, 1, ds), rng.uniform(-2, 2, da)
            if _kink_free(net, s, a, h):
                break
            resampled += 1
        g = net.grad_action(s, a)
        fd = fd_gradient(lambda x: net.value(s, x), a, h)
        errs.append(_rel(g, fd))
    return _check("critic-grad: q_grad_action vs finite differences", errs, 1e-5, t0,
                  f"{n} nets, {resampled} kink resamples")


def check_gauss_newton(seed: int = 0, n: int = 30) -> Check:
    """True action Hessian equals -g g' + exp(-Q) Hess(exp Q) on smooth critics.

    Both sides are finite-differenced: the Hessian from differences of the
    analytic gradient, the exp term from second differences of exp(Q).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n):
        da = (1, 2, 3)[i % 3]
        ds = int(rng.integers(1, 4))
        net = CriticNetwork(ds, da, hidden=(8, 8), rng=rng, activation="tanh")
        net.net.params[-2][:] = rng.normal(0, 0.5, net.net.params[-2].shape)
        s, a = rng.normal(0, 1, ds), rng.uniform(-1, 1, da)
        H_true = fd_jacobian(lambda x: net.grad_action(s, x), a, 1e-5)
        H_true = 0.5 * (H_true + H_true.T)
        q0 = net.value(s, a)
        g = net.grad_action(s, a)
        E = _second_differences(lambda x: np.exp(net.value(s, x) - q0), a, 1e-3)
        H_rec = -np.outer(g, g) + E
        errs.append(_rel(H_rec, H_true))
    return _check("gauss-newton: Hessian reconstruction", errs, 1e-4, t0)


def _second_differences(f, x, h):
    """Fourth-order central second differences of scalar ``f``."""
    d = x.size
    out = np.empty((d, d))
    f0 = f(x)
    steps = np.eye(d) * h
    for i in range(d):
        ei = steps[i]
        out[i, i] = (-f(x + 2 * ei) + 16 * f(x + ei) - 30 * f0 + 16 * f(x - ei)
                     - f(x - 2 * ei)) / (12 * h * h)
        for j in range(i + 1, d):
            ej = steps[j]

            def cross(k):
                return (f(x + k * ei + k * ej) - f(x + k * ei - k * ej)
                        - f(x - k * ei + k * ej) + f(x - k * ei - k * ej)) / (4 * k * k * h * h)
            out[i, j] = out[j, i] = (4 * cross(1) - cross(2)) / 3
    return out


# --- guide and dual ----------------------------------------------------------------------

def _quadratic_instance(rng, d, scale=1.0):
    H = _random_nsd(rng, d, 0.3, 2.0) * scale
    psi = rng.normal(0, 1, d)
    xi = float(rng.normal())
    phi = rng.normal(0, 0.5, d)
    cov = _random_spd(rng, d, 0.2, 1.0)
    return H, psi, xi, phi, cov


def check_dual(seed: int = 0) -> list[Check]:
    """Dual value differences vs quadrature of the log-integral dual, gradient vs FD."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    diff_errs, grad_errs = [], []
    etas = np.geomspace(0.3, 10.0, 5)
    omegas = np.geomspace(0.3, 10.0, 5)
    for d in (1, 2):
        H, psi, xi, phi, cov = _quadratic_instance(rng, d)
        critic = QuadraticCritic(H, psi, xi)
        tm = taylor_at(critic, np.zeros((1, 1)), phi[None], hessian=_exact_hessian(critic))
        eps, kappa = 0.05, -1.0
        pol = Gaussian(phi, cov)
        res = 1601 if d == 1 else 241
        vals, refs = [], []
        for eta in etas:
            for om in omegas:
                F = eta * np.linalg.inv(cov) - H
                c = eta + om
                tilt_mean = np.linalg.solve(F, eta * np.linalg.solve(cov, phi) + psi)
                tilt_cov = c * np.linalg.inv(F)
                big = np.diag(np.maximum(np.diag(cov), np.diag(tilt_cov)))
                grid = ActionGrid.around(phi, big, n_std=10, resolution=res, extra=[tilt_mean])
                refs.append(dual_quadrature(pol, critic, eta, om, eps, kappa, grid,
                                            state=np.zeros(1)))
                vals.append(dual_value(tm, phi[None], cov, eta, om, eps, kappa))
                gr = dual_grad(tm, phi[None], cov, eta, om, eps, kappa)
                fd = fd_gradient(lambda x: dual_value(tm, phi[None], cov, x[0], x[1], eps, kappa),
                                 np.array([eta, om]), 1e-5 * min(eta, om))
                grad_errs.append(_rel(gr, fd))
        vals, refs = np.array(vals), np.array(refs)
        diff_errs.extend(np.abs((vals - vals[0]) - (refs - refs[0])))
    t1 = time.perf_counter()
    return [_check("dual: value differences vs quadrature (5x5 grid)", diff_errs, 1e-4, t0),
            _check("dual: gradient vs finite differences", grad_errs, 1e-5, t1)]


def random_guide_instance(rng, d):
    """Quadratic critic, actor and bounds where the closed form is well defined."""
    H, psi, xi, phi, cov = _quadratic_instance(rng, d)
    eps = float(10 ** rng.uniform(-3, -1))
    ent = gauss_entropy(Gaussian(phi, cov))
    # below the policy entropy the KL bound tends to bind, above it the entropy bound
    kappa = ent + float(rng.uniform(-1.0, 0.5)) * np.sqrt(2 * eps)
    return H, psi, xi, phi, cov, eps, kappa


def check_guide_primal(seed: int = 0, n1: int = 25, n2: int = 10) -> list[Check]:
    """Closed-form guide vs direct constrained maximization over Gaussians."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    match, kl_ex, ent_ex, act = [], [], [], []
    for d, n in ((1, n1), (2, n2)):
        for _ in range(n):
            H, psi, xi, phi, cov, eps, kappa = random_guide_instance(rng, d)
            critic = QuadraticCritic(H, psi, xi)
            tm = taylor_at(critic, np.zeros((1, 1)), phi[None], hessian=_exact_hessian(critic))
            sol = solve_dual(tm, phi[None], cov, eps, kappa)
            g = guide_from_dual(tm, phi[None], cov, sol.eta, sol.omega).entry(0)
            ref = constrained_guide_reference(Gaussian(phi, cov), H, psi, xi, eps, kappa)
            match.append(max(np.abs(g.mean - ref.gaussian.mean).max(),
                             np.abs(g.cov - ref.gaussian.cov).max()))
            kl = gauss_kl(g, Gaussian(phi, cov))
            ent = gauss_entropy(g)
            kl_ex.append(kl / eps - 1.0)
            ent_ex.append(kappa - ent)
            act.append(min(abs(kl - eps), abs(ent - kappa)))
    t1 = time.perf_counter()
    return [_check("guide: closed form vs primal reference", match, 2e-3, t0,
                   f"{n1} 1-D + {n2} 2-D"),
            _check("guide: KL <= eps (1 + 1e-3)", kl_ex, 1e-3, t1),
            _check("guide: entropy >= kappa - 1e-3", ent_ex, 1e-3, t1),
            _check("guide: a constraint is active", act, 1e-3, t1)]


def check_second_order(seed: int = 0, n: int = 200) -> Check:
    """F^-1 L equals phi + F^-1 g0 when the model is expanded at the mean."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n):
        d = 1 + i % 5
        if i % 2:
            G = rng.normal(0, 1, (d, max(1, d // 2)))
            H = -G @ G.T
        else:
            H = _random_nsd(rng, d, 0.0, 2.0)
        psi = rng.normal(0, 1, d)
        phi = rng.normal(0, 1, d)
        cov = _random_spd(rng, d, 0.2, 2.0)
        eta, om = float(rng.uniform(0.1, 10)), float(rng.uniform(0.1, 10))
        critic = QuadraticCritic(H, psi)
        tm = taylor_at(critic, np.zeros((1, 1)), phi[None], hessian=_exact_hessian(critic))
        mu = guide_from_dual(tm, phi[None], cov, eta, om).means[0]
        F = eta * np.linalg.inv(cov) - H
        g0 = H @ phi + psi
        newton = phi + np.linalg.solve(F, g0)
        errs.append(np.abs(mu - newton).max() / max(1.0, np.abs(newton).max()))
    return _check("guide: mean form equals second-order step", errs, 1e-10, t0, f"{n} instances")


def check_dpg_limit(seed: int = 0, n: int = 50) -> Check:
    """MSE gradient toward phi + grad Q equals minus the DPG direction."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n):
        ds, da = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        actor = GaussianPolicy(ds, da, -2 * np.ones(da), 2 * np.ones(da), hidden=(16, 16),
                               rng=rng, output_init=0.5)
        critic = CriticNetwork(ds, da, hidden=(16, 16), rng=rng)
        critic.net.params[-2][:] = rng.normal(0, 1, critic.net.params[-2].shape)
        S = rng.normal(0, 1, (int(rng.integers(1, 33)), ds))
        phi = actor.mean(S)
        target = phi + critic.grad_action(S, phi)
        _, grads = mse_loss_and_grad(actor, S, target)
        dpg = dpg_direction(actor, critic, S)
        a, b = _flat(grads), -_flat(dpg)
        errs.append(np.abs(a - b).max() / max(1.0, np.abs(b).max()))
    return _check("dpg-limit: MSE gradient = -DPG direction", errs, 1e-10, t0, f"{n} instances")


def _quadratic_actor_setup(rng, d, eps):
    ds = 3
    H = _random_nsd(rng, d, 0.5, 2.0)
    C = rng.normal(0, 1, (d, ds))
    critic = QuadraticCritic(H, lambda s: C @ s, 0.0)
    actor = GaussianPolicy(ds, d, -3 * np.ones(d), 3 * np.ones(d), hidden=(8,), rng=rng,
                           output_init=0.5, init_cov=_random_spd(rng, d, 0.2, 1.0))
    S = rng.normal(0, 1, (16, ds))
    cfg = GuideConfig(epsilon=eps, kappa=-50.0, hessian=_exact_hessian(critic))
    return critic, actor, S, cfg, H


def check_gradient_identities(seed: int = 0, n: int = 20) -> list[Check]:
    """MSE and WMSE actor gradients against their action-space expansions.

    With an exact quadratic critic the MSE gradient equals
    E[J' H^-1 (dQ(phi) - dQ(phi_+))] and half the WMSE gradient equals
    E[J' (-dQ(phi) + dQ(phi_+) + eta Sigma^-1 H^-1 (dQ(phi) - dQ(phi_+)))].
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mse_errs, wmse_errs, pinned, etas = [], [], [], []
    for i in range(n):
        d = 1 + i % 3
        critic, actor, S, cfg, H = _quadratic_actor_setup(rng, d, 1e-3)
        N = S.shape[0]
        phi = actor.mean(S)
        guides, sol, _ = compute_guides(critic, phi, actor.Sigma, S, cfg)
        etas.append(sol.eta)
        phi_p = guides.means
        g_phi = critic.grad_action(S, phi)
        g_plus = critic.grad_action(S, phi_p)
        Hinv = np.linalg.inv(H)
        P = np.linalg.inv(actor.Sigma)

        _, grads = mse_loss_and_grad(actor, S, phi_p)
        expansion = actor.vjp(S, (g_phi - g_plus) @ Hinv.T / N)
        a, b = _flat(grads), _flat(expansion)
        mse_errs.append(np.abs(a - b).max() / max(1.0, np.abs(b).max()))

        _, wgrads = wmse_loss_and_grad(actor, S, phi_p, guide_precisions(guides, sol))
        bias = sol.eta * (g_phi - g_plus) @ Hinv.T @ P.T
        four = actor.vjp(S, (-g_phi + g_plus + bias) / N)
        a, b = 0.5 * _flat(wgrads), _flat(four)
        wmse_errs.append(np.abs(a - b).max() / max(1.0, np.abs(b).max()))

        pg = guide_from_dual(taylor_at(critic, S, phi, cfg.hessian), phi, actor.Sigma,
                             ETA_MIN, max(sol.omega, 1e-3))
        g_pin = critic.grad_action(S, pg.means)
        eta_terms = actor.vjp(S, ETA_MIN * (g_phi - g_pin) @ Hinv.T @ P.T / N)
        pinned.append(np.abs(_flat(eta_terms)).max())
    t1 = time.perf_counter()
    detail = f"eta* in [{min(etas):.3g}, {max(etas):.3g}]"
    out = [_check("dpg-limit: MSE gradient expansion (quadratic critic)", mse_errs, 1e-8, t0,
                  detail),
           _check("dpg-limit: WMSE four-term expansion (quadratic critic)", wmse_errs, 1e-8, t0,
                  detail),
           _check("dpg-limit: eta terms vanish at eta_min", pinned, 1e-6, t1)]
    if min(etas) <= ETA_MIN:
        out[0].passed = out[1].passed = False
        out[0].detail += "; eta* hit its floor, setup does not exercise eta > 0"
    return out


def check_naf(seed: int = 0, n: int = 20) -> Check:
    """NAF-form critic with eta pinned to 1e-10: the guide mean is b(s)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n):
        d, ds = 1 + i % 4, 3
        A = rng.normal(0, 1, (d, d))
        Bm = rng.normal(0, 0.5, (d, ds))
        W0 = -(A @ A.T + 0.2 * np.eye(d))

        def W(s, W0=W0):
            return W0 * (1.0 + 0.5 * np.tanh(s[0]) ** 2)

        def b(s, Bm=Bm):
            return np.tanh(Bm @ s)

        critic = QuadraticCritic.naf(W, b, lambda s: float(s @ s))
        S = rng.normal(0, 1, (8, ds))
        phi = rng.normal(0, 1, (8, d))
        cov = _random_spd(rng, d, 0.2, 1.5)
        tm = taylor_at(critic, S, phi, hessian=_exact_hessian(critic))
        om = float(rng.uniform(0.01, 10))
        mu = guide_from_dual(tm, phi, cov, 1e-10, om).means
        ref = np.array([b(s) for s in S])
        errs.append(np.abs(mu - ref).max())
    return _check("naf: guide mean equals b(s) at eta = 1e-10", errs, 1e-6, t0, f"{n} instances")


# --- lqr --------------------------------------------------------------------------------

class LinearGainPolicy:
    """a = -K s, used to evaluate analytic controllers through :func:`evaluate`."""

    def __init__(self, K):
        self.K = np.atleast_2d(np.asarray(K, dtype=np.float64))

    def mean(self, states):
        return -np.asarray(states, dtype=np.float64) @ self.K.T

    def act(self, state, rng=None, explore=False):
        return -self.K @ np.asarray(state, dtype=np.float64)


def _rollout(env: LQREnv, K, s0, horizon):
    s, total = np.array(s0, dtype=np.float64), 0.0
    for _ in range(horizon):
        a = -K @ s
        total -= s @ env.Q @ s + a @ env.R @ a
        s = env.A @ s + env.B @ a
    return total


def check_lqr(seed: int = 0) -> list[Check]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    env = make_env("lqr1d")
    riccati = []
    for gamma in (0.5, 0.9, 0.99):
        K, P = lqr_optimal_gain(env, gamma, return_cost=True)
        Kr, Pr = scalar_riccati(1.0, 1.0, 1.0, 1.0, gamma)
        riccati += [abs(K[0, 0] - Kr), abs(P[0, 0] - Pr)]
    for _ in range(5):
        a, b, q, r = rng.uniform(0.5, 1.5, 4)
        gamma = float(rng.uniform(0.5, 0.99))
        K = lqr_optimal_gain(LQREnv(a, b, q, r), gamma)
        riccati.append(abs(K[0, 0] - scalar_riccati(a, b, q, r, gamma)[0]))
    checks = [_check("lqr: Riccati iteration vs closed form", riccati, 1e-9, t0)]

    t1 = time.perf_counter()
    worse = []
    for name in ("lqr1d", "lqr2d"):
        env = make_env(name)
        K = lqr_optimal_gain(env, 0.99)
        starts = rng.uniform(-1, 1, (10, env.spec.state_dim))
        best = _discounted_cost(env, K, 0.99, starts)
        for _ in range(100):
            Kr = K + rng.normal(0, 0.3, K.shape)
            worse.append(best - min(_discounted_cost(env, Kr, 0.99, starts), 1e300))
    checks.append(_check("lqr: optimal gain beats 100 random gains", worse, 1e-9, t1))

    t2 = time.perf_counter()
    env = make_env("lqr1d")
    K = lqr_optimal_gain(env, 0.99)
    mean, rets = evaluate(LinearGainPolicy(K), env, 5, seed)
    seeds = np.random.default_rng(seed).integers(2 ** 31, size=5)
    direct = [_rollout(env, K, make_env("lqr1d").reset(int(s)), env.spec.horizon) for s in seeds]
    checks.append(_check("lqr: evaluate matches direct rollout", np.abs(rets - direct), 1e-6, t2))
    return checks


def _discounted_cost(env, K, gamma, starts) -> float:
    """Summed infinite-horizon discounted cost of a = -K s over ``starts``.

    Solves P = Q + K'RK + gamma M'PM, M = A - BK, as a linear system; a gain
    for which the discounted closed loop is unstable costs infinity.
    """
    M = env.A - env.B @ K
    if np.max(np.abs(np.linalg.eigvals(np.sqrt(gamma) * M))) >= 1.0:
        return np.inf
    d = M.shape[0]
    C = env.Q + K.T @ env.R @ K
    P = np.linalg.solve(np.eye(d * d) - gamma * np.kron(M.T, M.T), C.ravel()).reshape(d, d)
    return float(np.einsum("ni,ij,nj->", starts, P, starts))


# --- registry ------------------------------------------------------------------------------

def _listify(x):
    return x if isinstance(x, list) else [x]


SUITES = {
    "gauss": [check_gauss],
    "critic-grad": [check_critic_grad],
    "gauss-newton": [check_gauss_newton],
    "dual": [check_dual],
    "guide": [check_guide_primal, check_second_order],
    "dpg-limit": [check_dpg_limit, check_gradient_identities],
    "naf": [check_naf],
    "lqr": [check_lqr],
}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    out = []
    for fn in SUITES[name]:
        out.extend(_listify(fn(seed=seed)))
    return out


def run_all(seed: int = 0) -> list[Check]:
    return [c for name in SUITES for c in run_suite(name, seed)]
