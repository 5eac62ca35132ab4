# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched guide kernels; see ``_kernels_py`` for the reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, fabs, fmax, isfinite

cnp.import_array()

cdef double LOG_2PI = log(2.0 * 3.14159265358979323846)
cdef double JITTER = 1e-8


cdef int _chol(double* A, double* L, int d, double jitter) noexcept nogil:
    """Lower Cholesky of the d x d row-major A (+ jitter I) into L; 0 on success."""
    cdef int i, j, k
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = A[i * d + j]
            if i == j:
                s += jitter
            for k in range(j):
                s -= L[i * d + k] * L[j * d + k]
            if i == j:
                if not (s > 0.0):
                    return 1
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
        for j in range(i + 1, d):
            L[i * d + j] = 0.0
    return 0


cdef void _chol_solve(double* L, double* b, double* x, int d) noexcept nogil:
    """Solve (L L^T) x = b."""
    cdef int i, k
    cdef double s
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= L[i * d + k] * x[k]
        x[i] = s / L[i * d + i]
    for i in range(d - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, d):
            s -= L[k * d + i] * x[k]
        x[i] = s / L[i * d + i]


cdef int _factor_all(const double[:, :, ::1] H, const double[:, ::1] P,
                     double eta, double[:, :, ::1] Lout) noexcept nogil:
    """Factor F_n = eta P - H_n for every n; jitter the whole batch once on failure."""
    cdef Py_ssize_t n, N = H.shape[0]
    cdef int d = <int>H.shape[1]
    cdef int i, j, attempt
    cdef double jit = 0.0
    cdef double F[64]
    for attempt in range(2):
        for n in range(N):
            for i in range(d):
                for j in range(d):
                    F[i * d + j] = eta * P[i, j] - H[n, i, j]
            if _chol(F, &Lout[n, 0, 0], d, jit) != 0:
                break
        else:
            return 0
        jit = JITTER
    return 1


cdef int _dual_core(const double[:, :, ::1] H, const double[:, ::1] psi,
                    const double[:, ::1] phi, const double[:, ::1] P,
                    double logdet_2pi_sigma, double eta, double omega,
                    double eps, double kappa, double[:, :, ::1] Lf,
                    double* out) noexcept nogil:
    """Fill out[0:6] with (value, d_eta, d_omega, h_ee, h_eo, h_oo); 0 on success."""
    cdef Py_ssize_t n, N = psi.shape[0]
    cdef int d = <int>psi.shape[1]
    cdef double c = eta + omega
    cdef double Lv[8]
    cdef double Pphi[8]
    cdef double m[8]
    cdef double col[8]
    cdef double x[8]
    cdef double w[8]
    cdef double FP[64]
    cdef int i, j
    cdef double logdetF, lfl, phipphi, tr, tr2, mahal, wfw, t, half_ld
    cdef double sum_half_ld = 0.0, sum_quad = 0.0, sum_kl = 0.0
    cdef double sum_tr = 0.0, sum_hee = 0.0
    if _factor_all(H, P, eta, Lf) != 0:
        return 1
    for n in range(N):
        for i in range(d):
            t = 0.0
            for j in range(d):
                t = t + P[i, j] * phi[n, j]
            Pphi[i] = t
            Lv[i] = eta * t + psi[n, i]
        _chol_solve(&Lf[n, 0, 0], Lv, m, d)
        logdetF = 0.0
        lfl = 0.0
        phipphi = 0.0
        for i in range(d):
            logdetF = logdetF + 2.0 * log(Lf[n, i, i])
            lfl = lfl + Lv[i] * m[i]
            phipphi = phipphi + phi[n, i] * Pphi[i]
        tr = 0.0
        for j in range(d):
            for i in range(d):
                col[i] = P[i, j]
            _chol_solve(&Lf[n, 0, 0], col, x, d)
            for i in range(d):
                FP[i * d + j] = x[i]
            tr = tr + x[j]
        tr2 = 0.0
        for i in range(d):
            for j in range(d):
                tr2 = tr2 + FP[i * d + j] * FP[j * d + i]
        for i in range(d):
            t = 0.0
            for j in range(d):
                t = t + P[i, j] * (m[j] - phi[n, j])
            w[i] = t
        mahal = 0.0
        for i in range(d):
            mahal = mahal + (m[i] - phi[n, i]) * w[i]
        _chol_solve(&Lf[n, 0, 0], w, x, d)
        wfw = 0.0
        for i in range(d):
            wfw = wfw + w[i] * x[i]
        half_ld = 0.5 * (d * (LOG_2PI + log(c)) - logdetF)
        sum_half_ld = sum_half_ld + half_ld
        sum_quad = sum_quad + lfl - eta * phipphi
        sum_kl = sum_kl + 0.5 * (c * tr + mahal - d + logdet_2pi_sigma) - half_ld
        sum_tr = sum_tr + tr
        sum_hee = sum_hee + 0.5 * c * tr2 + wfw - tr
    out[0] = (eta * eps - omega * kappa + c * sum_half_ld / N
              - 0.5 * eta * logdet_2pi_sigma + 0.5 * sum_quad / N)
    out[1] = eps - sum_kl / N
    out[2] = sum_half_ld / N + 0.5 * d - kappa
    out[5] = 0.5 * d / c
    out[3] = out[5] + sum_hee / N
    out[4] = out[5] - 0.5 * sum_tr / N
    if not isfinite(out[0]):
        return 1
    return 0


def dual_eval(const double[:, :, ::1] H, const double[:, ::1] psi,
              const double[:, ::1] phi, const double[:, ::1] P,
              double logdet_2pi_sigma, double eta, double omega,
              double eps, double kappa):
    cdef Py_ssize_t N = psi.shape[0]
    cdef int d = <int>psi.shape[1]
    if d > 8:
        raise ValueError("compiled kernel supports action dimension <= 8")
    cdef double[:, :, ::1] Lf = np.empty((N, d, d))
    cdef double out[6]
    cdef int status
    with nogil:
        status = _dual_core(H, psi, phi, P, logdet_2pi_sigma, eta, omega,
                            eps, kappa, Lf, out)
    if status != 0:
        return (float("nan"),) * 6 + (False,)
    return (out[0], out[1], out[2], out[3], out[4], out[5], True)


cdef void _newton_step(double ge, double go, double hee, double heo, double hoo,
                       bint free_e, bint free_o, double* pe, double* po) noexcept nogil:
    cdef double scale, mu, a, c, det
    cdef int k
    if free_e and free_o:
        scale = fmax(fmax(fabs(hee), fabs(hoo)), 1e-300)
        mu = 0.0
        for k in range(80):
            a = hee + mu
            c = hoo + mu
            det = a * c - heo * heo
            if a > 0.0 and det > 0.0:
                pe[0] = -(c * ge - heo * go) / det
                po[0] = -(a * go - heo * ge) / det
                if pe[0] * ge + po[0] * go < 0.0:
                    return
            mu = fmax(10.0 * mu, 1e-12 * scale)
        pe[0] = -ge / scale
        po[0] = -go / scale
    elif free_e:
        pe[0] = -ge / (hee if hee > 0.0 else fmax(fabs(hee), 1e-12))
        po[0] = 0.0
    elif free_o:
        pe[0] = 0.0
        po[0] = -go / (hoo if hoo > 0.0 else fmax(fabs(hoo), 1e-12))
    else:
        pe[0] = 0.0
        po[0] = 0.0


def solve_dual(const double[:, :, ::1] H, const double[:, ::1] psi,
               const double[:, ::1] phi, const double[:, ::1] P,
               double logdet_2pi_sigma, double eps, double kappa,
               double eta0, double omega0, double eta_min, double omega_min,
               double tol_eta, double tol_omega, int max_iter):
    cdef Py_ssize_t N = psi.shape[0]
    cdef int d = <int>psi.shape[1]
    if d > 8:
        raise ValueError("compiled kernel supports action dimension <= 8")
    cdef double[:, :, ::1] Lf = np.empty((N, d, d))
    cdef double cur[6]
    cdef double new[6]
    cdef double x0 = fmax(eta0, eta_min), x1 = fmax(omega0, omega_min)
    cdef double n0 = 0.0, n1 = 0.0, pg0, pg1, pe, po, t, r0, q0, q1
    cdef int it = 0, k
    cdef bint converged = False, accepted
    with nogil:
        if _dual_core(H, psi, phi, P, logdet_2pi_sigma, x0, x1, eps, kappa, Lf, cur) != 0:
            with gil:
                return (x0, x1, float("nan"), float("nan"), float("nan"), 0, False, False)
        while it < max_iter:
            pg0 = 0.0 if (x0 <= eta_min * (1.0 + 1e-12) and cur[1] > 0.0) else cur[1]
            pg1 = 0.0 if (x1 <= omega_min * (1.0 + 1e-12) and cur[2] > 0.0) else cur[2]
            if fabs(pg0) <= tol_eta and fabs(pg1) <= tol_omega:
                converged = True
                break
            it += 1
            _newton_step(pg0, pg1, cur[3], cur[4], cur[5], pg0 != 0.0, pg1 != 0.0, &pe, &po)
            r0 = (pg0 / tol_eta) ** 2 + (pg1 / tol_omega) ** 2
            t = 1.0
            accepted = False
            for k in range(60):
                n0 = fmax(x0 + t * pe, eta_min)
                n1 = fmax(x1 + t * po, omega_min)
                if _dual_core(H, psi, phi, P, logdet_2pi_sigma, n0, n1, eps, kappa, Lf, new) == 0:
                    if new[0] <= cur[0] + 1e-4 * (cur[1] * (n0 - x0) + cur[2] * (n1 - x1)):
                        accepted = True
                    elif fabs(new[0] - cur[0]) <= 1e-13 * (1.0 + fabs(cur[0])):
                        q0 = 0.0 if (n0 <= eta_min * (1.0 + 1e-12) and new[1] > 0.0) else new[1]
                        q1 = 0.0 if (n1 <= omega_min * (1.0 + 1e-12) and new[2] > 0.0) else new[2]
                        accepted = (q0 / tol_eta) ** 2 + (q1 / tol_omega) ** 2 < r0
                    if accepted:
                        break
                t *= 0.5
            if not accepted:
                break
            x0 = n0
            x1 = n1
            for k in range(6):
                cur[k] = new[k]
    return (x0, x1, cur[0], cur[1], cur[2], it, converged, True)


def guide_moments(const double[:, :, ::1] H, const double[:, ::1] psi,
                  const double[:, ::1] phi, const double[:, ::1] P,
                  double eta, double omega):
    cdef Py_ssize_t n, N = psi.shape[0]
    cdef int d = <int>psi.shape[1]
    if d > 8:
        raise ValueError("compiled kernel supports action dimension <= 8")
    cdef double c = eta + omega
    cdef double[:, :, ::1] Lf = np.empty((N, d, d))
    means_arr = np.empty((N, d))
    covs_arr = np.empty((N, d, d))
    cdef double[:, ::1] means = means_arr
    cdef double[:, :, ::1] covs = covs_arr
    cdef double Lv[8]
    cdef double e[8]
    cdef double x[8]
    cdef int i, j
    cdef double t
    with nogil:
        if _factor_all(H, P, eta, Lf) != 0:
            with gil:
                return None, None, False
        for n in range(N):
            for i in range(d):
                t = 0.0
                for j in range(d):
                    t = t + P[i, j] * phi[n, j]
                Lv[i] = eta * t + psi[n, i]
            _chol_solve(&Lf[n, 0, 0], Lv, x, d)
            for i in range(d):
                means[n, i] = x[i]
            for j in range(d):
                for i in range(d):
                    e[i] = 1.0 if i == j else 0.0
                _chol_solve(&Lf[n, 0, 0], e, x, d)
                for i in range(d):
                    covs[n, i, j] = c * x[i]
            for i in range(d):
                for j in range(i):
                    t = 0.5 * (covs[n, i, j] + covs[n, j, i])
                    covs[n, i, j] = t
                    covs[n, j, i] = t
    return means_arr, covs_arr, True


def bias_relu(double[:, ::1] z, const double[::1] b):
    """z <- max(z + b, 0) in place, one pass."""
    cdef Py_ssize_t n, j, N = z.shape[0], K = z.shape[1]
    cdef double v
    with nogil:
        for n in range(N):
            for j in range(K):
                v = z[n, j] + b[j]
                z[n, j] = 0.0 if v < 0.0 else v


def relu_mask(double[:, ::1] delta, const double[:, ::1] z):
    """delta <- delta * (z > 0) in place."""
    cdef Py_ssize_t n, j, N = delta.shape[0], K = delta.shape[1]
    with nogil:
        for n in range(N):
            for j in range(K):
                if not (z[n, j] > 0.0):
                    delta[n, j] = 0.0
