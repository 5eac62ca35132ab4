"""NumPy implementation of the batched guide kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``GAC_PURE_PYTHON=1``. Signatures match the extension exactly.

Shapes: ``H`` (N, d, d), ``psi`` and ``phi`` (N, d), ``P`` (d, d) is the
inverse actor covariance shared by all states.
"""
import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
JITTER = 1e-8


def _factor(F):
    try:
        return np.linalg.cholesky(F)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(F + JITTER * np.eye(F.shape[-1]))
    except np.linalg.LinAlgError:
        return None


def _solve_chol(L, b):
    # b: (N, d, k)
    y = np.linalg.solve(L, b)
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)


def dual_eval(H, psi, phi, P, logdet_2pi_sigma, eta, omega, eps, kappa):
    """Return ``(value, d_eta, d_omega, h_ee, h_eo, h_oo, ok)``.

    ``value`` is the Taylor-model dual without its eta/omega-independent
    constant. ``d_eta = eps - mean KL`` and ``d_omega = mean entropy - kappa``
    of the induced guides; the ``h_*`` entries form the exact Hessian.
    """
    N, d = psi.shape
    c = eta + omega
    F = eta * P - H
    L = _factor(F)
    if L is None:
        return (np.nan,) * 6 + (False,)
    Pphi = phi @ P
    Lvec = eta * Pphi + psi
    rhs = np.concatenate([Lvec[:, :, None], np.broadcast_to(P, (N, d, d))], axis=2)
    sol = _solve_chol(L, rhs)
    m = sol[:, :, 0]
    X = sol[:, :, 1:]                       # F^-1 P
    trFinvP = np.trace(X, axis1=1, axis2=2)
    trFinvP2 = np.einsum("nij,nji->n", X, X)
    logdetF = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    LFL = np.sum(Lvec * m, axis=1)
    phiPphi = np.sum(phi * Pphi, axis=1)
    dm = m - phi
    w = dm @ P
    mahal = np.sum(w * dm, axis=1)
    wFw = np.sum(w * _solve_chol(L, w[:, :, None])[:, :, 0], axis=1)

    half_logdet_guide = 0.5 * (d * (LOG_2PI + np.log(c)) - logdetF)
    value = (eta * eps - omega * kappa
             + c * np.mean(half_logdet_guide)
             - 0.5 * eta * logdet_2pi_sigma
             + 0.5 * np.mean(LFL - eta * phiPphi))
    entropy = half_logdet_guide + 0.5 * d
    kl = 0.5 * (c * trFinvP + mahal - d + logdet_2pi_sigma) - half_logdet_guide
    h_oo = 0.5 * d / c
    h_eo = h_oo - 0.5 * trFinvP.mean()
    h_ee = h_oo + np.mean(0.5 * c * trFinvP2 + wFw - trFinvP)
    if not np.isfinite(value):
        return (np.nan,) * 6 + (False,)
    return (float(value), float(eps - kl.mean()), float(entropy.mean() - kappa),
            float(h_ee), float(h_eo), float(h_oo), True)


def guide_moments(H, psi, phi, P, eta, omega):
    """Per-state guide mean ``F^-1 L`` and covariance ``(eta + omega) F^-1``."""
    N, d = psi.shape
    F = eta * P - H
    L = _factor(F)
    if L is None:
        return None, None, False
    Lvec = eta * (phi @ P) + psi
    eye = np.broadcast_to(np.eye(d), (N, d, d))
    rhs = np.concatenate([Lvec[:, :, None], eye], axis=2)
    sol = _solve_chol(L, rhs)
    Finv = sol[:, :, 1:]
    Finv = 0.5 * (Finv + np.swapaxes(Finv, 1, 2))
    return sol[:, :, 0], (eta + omega) * Finv, True


def _newton_step(g, h_ee, h_eo, h_oo, free_e, free_o):
    """Damped Newton direction on the free coordinates; zero on the others."""
    if free_e and free_o:
        scale = max(abs(h_ee), abs(h_oo), 1e-300)
        mu = 0.0
        for _ in range(80):
            a, c = h_ee + mu, h_oo + mu
            det = a * c - h_eo * h_eo
            if a > 0.0 and det > 0.0:
                pe = -(c * g[0] - h_eo * g[1]) / det
                po = -(a * g[1] - h_eo * g[0]) / det
                if pe * g[0] + po * g[1] < 0.0:
                    return pe, po
            mu = max(10.0 * mu, 1e-12 * scale)
        return -g[0] / scale, -g[1] / scale
    if free_e:
        return -g[0] / (h_ee if h_ee > 0.0 else max(abs(h_ee), 1e-12)), 0.0
    if free_o:
        return 0.0, -g[1] / (h_oo if h_oo > 0.0 else max(abs(h_oo), 1e-12))
    return 0.0, 0.0


def solve_dual(H, psi, phi, P, logdet_2pi_sigma, eps, kappa, eta0, omega0,
               eta_min, omega_min, tol_eta, tol_omega, max_iter):
    """Projected Newton minimization of the dual over eta >= eta_min, omega >= omega_min.

    Returns ``(eta, omega, value, d_eta, d_omega, iterations, converged, ok)``;
    ``ok`` is False only if the dual is not finite at the starting point.
    Convergence: each projected-gradient entry below its tolerance.
    """
    lb = (eta_min, omega_min)
    x = [max(eta0, eta_min), max(omega0, omega_min)]

    def evaluate(z):
        out = dual_eval(H, psi, phi, P, logdet_2pi_sigma, z[0], z[1], eps, kappa)
        if not out[-1] or not np.isfinite(out[0]):
            return None
        return out

    def pgrad(z, g):
        pe = 0.0 if (z[0] <= lb[0] * (1.0 + 1e-12) and g[0] > 0.0) else g[0]
        po = 0.0 if (z[1] <= lb[1] * (1.0 + 1e-12) and g[1] > 0.0) else g[1]
        return pe, po

    def resid(pg):
        return (pg[0] / tol_eta) ** 2 + (pg[1] / tol_omega) ** 2

    cur = evaluate(x)
    if cur is None:
        return (x[0], x[1], np.nan, np.nan, np.nan, 0, False, False)
    f, ge, go, hee, heo, hoo, _ = cur
    converged = False
    it = 0
    while it < max_iter:
        pg = pgrad(x, (ge, go))
        if abs(pg[0]) <= tol_eta and abs(pg[1]) <= tol_omega:
            converged = True
            break
        it += 1
        pe, po = _newton_step(pg, hee, heo, hoo, pg[0] != 0.0, pg[1] != 0.0)
        r0 = resid(pg)
        t = 1.0
        accepted = False
        for _ in range(60):
            xn = [max(x[0] + t * pe, lb[0]), max(x[1] + t * po, lb[1])]
            new = evaluate(xn)
            if new is not None:
                fn = new[0]
                if fn <= f + 1e-4 * (ge * (xn[0] - x[0]) + go * (xn[1] - x[1])):
                    accepted = True
                elif abs(fn - f) <= 1e-13 * (1.0 + abs(f)):
                    # f is flat to rounding here; fall back on the residual
                    accepted = resid(pgrad(xn, new[1:3])) < r0
                if accepted:
                    break
            t *= 0.5
        if not accepted:
            break
        x = xn
        f, ge, go, hee, heo, hoo, _ = new
    return (x[0], x[1], f, ge, go, it, converged, True)


def bias_relu(z, b):
    """z <- max(z + b, 0) in place."""
    z += b
    np.maximum(z, 0.0, out=z)


def relu_mask(delta, z):
    """delta <- delta * (z > 0) in place."""
    delta[~(z > 0.0)] = 0.0
