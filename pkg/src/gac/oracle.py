"""Brute-force references used by the tests and ``gac verify``.

Nothing here calls into the guide module or critic internals: critics are
only queried through ``value``/``grad_action``, and all Gaussian quantities
are recomputed from their textbook formulas.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooCoarse, InfeasibleBounds
from .gaussmath import Gaussian

MIN_RESOLUTION = {1: 64, 2: 48}
_LOG_2PI = np.log(2.0 * np.pi)


# --- grids -----------------------------------------------------------------------

@dataclass
class ActionGrid:
    """Tensor-product trapezoid grid over a box."""
    low: np.ndarray
    high: np.ndarray
    resolution: tuple
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        self.high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        d = self.low.size
        res = (self.resolution,) * d if np.isscalar(self.resolution) else tuple(self.resolution)
        if len(res) != d:
            raise ValueError("one resolution per dimension")
        need = MIN_RESOLUTION.get(d)
        if need is None:
            raise ValueError("grids are limited to 1-D and 2-D actions")
        if min(res) < need:
            raise ValueError(f"resolution must be >= {need} per dimension in {d}-D")
        self.resolution = tuple(int(r) for r in res)
        axes, wts = [], []
        for lo, hi, n in zip(self.low, self.high, self.resolution):
            x = np.linspace(lo, hi, n)
            w = np.full(n, (hi - lo) / (n - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            axes.append(x)
            wts.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([m.ravel() for m in mesh], axis=1)
        W = wts[0]
        for w in wts[1:]:
            W = np.multiply.outer(W, w)
        self.weights = W.ravel()

    @property
    def dim(self) -> int:
        return self.low.size

    def refined(self) -> "ActionGrid":
        """Same box with the spacing halved."""
        return ActionGrid(self.low, self.high, tuple(2 * r - 1 for r in self.resolution))

    @classmethod
    def around(cls, mean, cov, n_std: float = 8.0, resolution=None, extra=()) -> "ActionGrid":
        """Box covering ``n_std`` marginal deviations of N(mean, cov) and any ``extra`` points."""
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        sd = np.sqrt(np.diag(np.atleast_2d(cov)))
        lo, hi = mean - n_std * sd, mean + n_std * sd
        for p in extra:
            p = np.atleast_1d(p)
            lo = np.minimum(lo, p - n_std * sd)
            hi = np.maximum(hi, p + n_std * sd)
        if resolution is None:
            resolution = 801 if mean.size == 1 else 161
        return cls(lo, hi, resolution)


# --- Gaussian references ----------------------------------------------------------

def _logpdf(mean, cov, X):
    mean = np.atleast_1d(mean)
    cov = np.atleast_2d(cov)
    d = mean.size
    diff = X - mean
    sol = np.linalg.solve(cov, diff.T).T
    _, logdet = np.linalg.slogdet(cov)
    return -0.5 * (np.sum(diff * sol, axis=1) + d * _LOG_2PI + logdet)


def kl_quadrature(p_mean, p_cov, q_mean, q_cov, grid: ActionGrid) -> float:
    """E_p[log p - log q] on the grid."""
    lp = _logpdf(p_mean, p_cov, grid.nodes)
    lq = _logpdf(q_mean, q_cov, grid.nodes)
    return float(np.sum(grid.weights * np.exp(lp) * (lp - lq)))


def entropy_quadrature(mean, cov, grid: ActionGrid) -> float:
    lp = _logpdf(mean, cov, grid.nodes)
    return float(-np.sum(grid.weights * np.exp(lp) * lp))


def _q_on_grid(critic, state, grid):
    if callable(critic) and not hasattr(critic, "value"):
        return np.asarray(critic(grid.nodes), dtype=np.float64)
    S = np.repeat(np.atleast_2d(np.asarray(state, dtype=np.float64)), len(grid.nodes), axis=0)
    return np.asarray(critic.value(S, grid.nodes), dtype=np.float64)


def _logsumexp(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


# --- dual and guide references -----------------------------------------------------

def _check_cover(mean, cov, grid, n_std=6.0):
    sd = np.sqrt(np.diag(np.atleast_2d(cov)))
    mean = np.atleast_1d(mean)
    if np.any(grid.low > mean - n_std * sd) or np.any(grid.high < mean + n_std * sd):
        raise ValueError(f"grid must cover {n_std} policy standard deviations")


def _dual_on(policy, critic, state, eta, omega, eps, kappa, grid):
    c = eta + omega
    lp = _logpdf(policy.mean, policy.cov, grid.nodes)
    q = _q_on_grid(critic, state, grid)
    log_int = _logsumexp(eta / c * lp + q / c + np.log(grid.weights))
    return eta * eps - omega * kappa + c * log_int


def dual_quadrature(policy, critic, eta, omega, eps, kappa, grid: ActionGrid,
                    state=None, tol: float = 1e-5) -> float:
    """eta eps - omega kappa + (eta+omega) log int pi^(eta/(eta+omega)) exp(Q/(eta+omega)) da.

    ``critic`` is an object with ``value(states, actions)`` or a function of
    the action array. Raises :class:`GridTooCoarse` when halving the spacing
    moves the value by more than ``tol``.
    """
    if eta <= 0 or omega <= 0:
        raise ValueError("eta and omega must be positive")
    _check_cover(policy.mean, policy.cov, grid)
    v = _dual_on(policy, critic, state, eta, omega, eps, kappa, grid)
    v2 = _dual_on(policy, critic, state, eta, omega, eps, kappa, grid.refined())
    if abs(v2 - v) > tol:
        raise GridTooCoarse(f"dual changed by {abs(v2 - v):.3g} under refinement")
    return float(v2)


@dataclass
class Moments:
    mean: np.ndarray
    cov: np.ndarray


def _tilted_moments(policy, critic, state, eta, omega, grid):
    c = eta + omega
    lp = _logpdf(policy.mean, policy.cov, grid.nodes)
    q = _q_on_grid(critic, state, grid)
    logw = eta / c * lp + q / c + np.log(grid.weights)
    w = np.exp(logw - np.max(logw))
    w /= w.sum()
    mean = w @ grid.nodes
    diff = grid.nodes - mean
    cov = (w[:, None] * diff).T @ diff
    return mean, 0.5 * (cov + cov.T)


def guide_grid_search(policy, critic, eta, omega, grid: ActionGrid, state=None,
                      tol: float = 1e-6) -> Moments:
    """First two moments of pi^(eta/c) exp(Q/c), c = eta + omega, normalized on the grid."""
    if eta <= 0 or omega <= 0:
        raise ValueError("eta and omega must be positive")
    _check_cover(policy.mean, policy.cov, grid)
    m1, c1 = _tilted_moments(policy, critic, state, eta, omega, grid)
    m2, c2 = _tilted_moments(policy, critic, state, eta, omega, grid.refined())
    change = max(np.max(np.abs(m2 - m1)), np.max(np.abs(c2 - c1)))
    if change > tol * max(1.0, float(np.max(np.abs(c2)))):
        raise GridTooCoarse(f"moments changed by {change:.3g} under refinement")
    return Moments(m2, c2)


# --- finite differences ------------------------------------------------------------

def fd_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.empty(x.size)
    flat = x.ravel()
    for i in range(x.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return g.reshape(x.shape)


def fd_jacobian(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of vector-valued ``f``; shape (out, in)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))).ravel() / (2.0 * h))
    return np.stack(cols, axis=1)


# --- duplicate forward pass ---------------------------------------------------------

def mlp_forward_reference(params, x, activation: str = "relu") -> np.ndarray:
    """Row-by-row, unit-by-unit forward pass of a ``(W0, b0, W1, b1, ...)`` network."""
    x = np.asarray(x, dtype=np.float64)
    n_layers = len(params) // 2
    h = list(x)
    for i in range(n_layers):
        W, b = params[2 * i], params[2 * i + 1]
        out = []
        for j in range(W.shape[1]):
            z = float(b[j]) + sum(float(h[k]) * float(W[k, j]) for k in range(W.shape[0]))
            if i < n_layers - 1:
                z = max(z, 0.0) if activation == "relu" else float(np.tanh(z))
            out.append(z)
        h = out
    return np.array(h)


# --- primal reference ---------------------------------------------------------------

@dataclass
class PrimalSolution:
    gaussian: object
    objective: float
    kl: float
    entropy: float
    kl_active: bool
    entropy_active: bool
    rounds: int


def _unpack(theta, d):
    """theta rows -> (x, M) with M lower triangular; diagonal entries first."""
    x = theta[:, :d]
    M = np.zeros((theta.shape[0], d, d))
    idx = d
    for i in range(d):
        M[:, i, i] = theta[:, idx]
        idx += 1
    for i in range(d):
        for j in range(i):
            M[:, i, j] = theta[:, idx]
            idx += 1
    return x, M


def constrained_guide_reference(policy, H, psi, xi, eps: float, kappa: float,
                                points: int | None = None, lattice_tol: float = 1e-4,
                                max_rounds: int = 4000, polish: bool = True,
                                active_tol: float = 1e-3) -> PrimalSolution:
    """Maximize E_q[0.5 a'Ha + psi'a + xi] over Gaussians q with KL(q||policy) <= eps
    and entropy(q) >= kappa, by lattice search.

    q is written in the policy's whitened frame: mean = phi + L x and
    cov = L M M' L' with L the policy's Cholesky factor and M lower
    triangular, so KL = 0.5 (||M||_F^2 + ||x||^2 - d) - sum log M_ii and the
    entropy is the policy's plus sum log M_ii. A lattice of ``points`` per
    coordinate is laid around the incumbent; the half-width is kept while
    the incumbent improves and halved otherwise, down to ``lattice_tol``.

    Lattice search alone stalls on the curved KL boundary once both
    constraints bind in 2-D, so the incumbent is then polished by SLSQP on
    the same primal problem.
    """
    phi = np.atleast_1d(np.asarray(policy.mean, dtype=np.float64))
    Sig = np.atleast_2d(np.asarray(policy.cov, dtype=np.float64))
    d = phi.size
    if d not in (1, 2):
        raise ValueError("reference is limited to 1-D and 2-D actions")
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    psi = np.atleast_1d(np.asarray(psi, dtype=np.float64))
    if np.max(np.linalg.eigvalsh(H)) >= 0:
        raise ValueError("H must be negative definite")
    L = np.linalg.cholesky(Sig)
    ent0 = 0.5 * (d * (_LOG_2PI + 1.0) + 2.0 * np.sum(np.log(np.diag(L))))
    Ht = L.T @ H @ L                      # curvature in the whitened frame
    gt = L.T @ (H @ phi + psi)            # gradient at phi in the whitened frame
    q0 = 0.5 * phi @ H @ phi + psi @ phi + float(xi)

    def evaluate(theta):
        x, M = _unpack(theta, d)
        diag = np.diagonal(M, axis1=1, axis2=2)
        ok = np.all(diag > 0, axis=1)
        logdiag = np.log(np.where(ok[:, None], diag, 1.0))
        kl = 0.5 * (np.sum(M * M, axis=(1, 2)) + np.sum(x * x, axis=1) - d) - logdiag.sum(1)
        ent = ent0 + logdiag.sum(1)
        MMt = M @ np.swapaxes(M, 1, 2)
        obj = (q0 + x @ gt + 0.5 * np.einsum("ni,ij,nj->n", x, Ht, x)
               + 0.5 * np.einsum("ij,nji->n", Ht, MMt))
        feas = ok & (kl <= eps) & (ent >= kappa)
        return np.where(feas, obj, -np.inf), kl, ent

    # largest isotropic scale inside the KL ball
    f = lambda m: d * (m * m - 1.0 - 2.0 * np.log(m)) - 2.0 * eps
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    lo = 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < 0 else (lo, mid)
    m_max = lo
    if kappa > ent0 + d * np.log(m_max) + 1e-12:
        raise InfeasibleBounds("entropy bound exceeds what the KL ball allows")
    m_start = 1.0 if kappa <= ent0 else float(np.exp((kappa - ent0) / d))
    m_start = min(m_start, m_max)

    n_par = d + d * (d + 1) // 2
    inc = np.zeros(n_par)
    inc[d:2 * d] = m_start
    best, _, _ = evaluate(inc[None, :])
    best = float(best[0])
    if not np.isfinite(best):
        # at the edge of feasibility the start sits on both boundaries
        inc[d:2 * d] = m_max
        best = float(evaluate(inc[None, :])[0][0])
    r = np.full(n_par, max(np.sqrt(2.0 * eps), 1e-3))
    r[d:2 * d] = max(m_max - 1.0, 1.0 - 1.0 / m_max, 1e-3)
    if points is None:
        points = 11 if d == 1 else 5
    offsets = np.linspace(-1.0, 1.0, points)
    mesh = np.meshgrid(*([offsets] * n_par), indexing="ij")
    unit = np.stack([m.ravel() for m in mesh], axis=1)
    rounds = 0
    while rounds < max_rounds and np.max(r) > lattice_tol:
        rounds += 1
        cand = inc + unit * r
        val, _, _ = evaluate(cand)
        k = int(np.argmax(val))
        if val[k] > best:
            best = float(val[k])
            inc = cand[k]
        else:
            r *= 0.5

    if polish:
        inc, best = _polish(evaluate, inc, best, d, eps, kappa, ent0, gt, Ht, q0)
    x, M = _unpack(inc[None, :], d)
    x, M = x[0], M[0]
    _, kl, ent = evaluate(inc[None, :])
    kl, ent = float(kl[0]), float(ent[0])
    mean = phi + L @ x
    cov = L @ M @ M.T @ L.T
    # relative tolerance on KL since eps itself is small
    return PrimalSolution(Gaussian(mean, 0.5 * (cov + cov.T)), best, kl, ent,
                          abs(kl - eps) <= active_tol * eps,
                          abs(ent - kappa) <= active_tol, rounds)


def _polish(evaluate, inc, best, d, eps, kappa, ent0, gt, Ht, q0):
    from scipy.optimize import minimize

    def split(theta):
        x, M = _unpack(theta[None, :], d)
        return x[0], M[0]

    def neg_obj(theta):
        x, M = split(theta)
        return -(q0 + x @ gt + 0.5 * x @ Ht @ x + 0.5 * np.trace(Ht @ M @ M.T))

    def neg_obj_grad(theta):
        x, M = split(theta)
        gx = gt + Ht @ x
        GM = np.tril(Ht @ M)
        return -np.concatenate([gx, np.diag(GM),
                                [GM[i, j] for i in range(d) for j in range(i)]])

    def kl_slack(theta):
        x, M = split(theta)
        return eps - (0.5 * (np.sum(M * M) + x @ x - d) - np.sum(np.log(np.diag(M))))

    def ent_slack(theta):
        _, M = split(theta)
        return ent0 + np.sum(np.log(np.diag(M))) - kappa

    bounds = [(None, None)] * d + [(1e-12, None)] * d + [(None, None)] * (d * (d - 1) // 2)
    with warnings.catch_warnings():
        # SLSQP clips iterates to the bounds and says so; the result is rechecked below
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(neg_obj, inc, jac=neg_obj_grad, method="SLSQP", bounds=bounds,
                       constraints=[{"type": "ineq", "fun": kl_slack},
                                    {"type": "ineq", "fun": ent_slack}],
                       options={"ftol": 1e-15, "maxiter": 1000})
    theta = res.x
    # accept only if feasible up to solver tolerance and no worse
    if kl_slack(theta) > -1e-10 and ent_slack(theta) > -1e-10:
        val = -neg_obj(theta)
        if val >= best - 1e-12:
            return theta, float(val)
    return inc, best


# --- Riccati ------------------------------------------------------------------------

def scalar_riccati(a: float, b: float, q: float, r: float, gamma: float):
    """Closed-form stabilizing root of the scalar discounted Riccati equation.

    Returns ``(K, P)`` with a = -K s optimal and value -P s^2.
    """
    if q == 0.0:
        return 0.0, 0.0
    # P = q + g a^2 P - g^2 a^2 b^2 P^2 / (r + g b^2 P) rearranged to
    # g b^2 P^2 + (r - g a^2 r - q g b^2) P - q r = 0
    A2 = gamma * b * b
    B1 = r - gamma * a * a * r - q * gamma * b * b
    C0 = -q * r
    P = (-B1 + np.sqrt(B1 * B1 - 4.0 * A2 * C0)) / (2.0 * A2)
    K = gamma * b * P * a / (r + gamma * b * b * P)
    return float(K), float(P)
