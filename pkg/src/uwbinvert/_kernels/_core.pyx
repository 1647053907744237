# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled reflectivity kernels (hot path of every posterior evaluation)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, cos, sin, hypot, copysign

from . import fallback

cnp.import_array()

cdef double MU0 = 4.0e-7 * 3.14159265358979323846
cdef double EPS0 = 8.8541878128e-12

DEF MAXM = 32

IMPL = "compiled"


cdef inline double complex csqrt_c(double complex z) noexcept nogil:
    # principal branch square root via real arithmetic
    cdef double re = z.real
    cdef double im = z.imag
    cdef double m = hypot(re, im)
    cdef double s = sqrt(0.5 * (m + re))
    cdef double t = sqrt(0.5 * (m - re))
    if im == 0.0 and re >= 0.0:
        return s
    return s + 1j * copysign(t, im)


cdef inline double complex cexp_c(double complex z) noexcept nogil:
    cdef double f = exp(z.real)
    return f * cos(z.imag) + 1j * (f * sin(z.imag))


cdef void _reflectivity_1f(
    double omega,
    const double* eps_all,
    const double* sig_all,
    const double* d,
    int m,
    double complex* x_out,
) noexcept nogil:
    cdef double complex jwmu = 1j * (omega * MU0)
    cdef double complex eta[MAXM + 1]
    cdef double complex dd, x, r, g, e, xe
    cdef int i

    for i in range(m + 1):
        dd = sig_all[i] + 1j * (omega * EPS0 * eps_all[i])
        eta[i] = csqrt_c(jwmu / dd)

    x = (eta[m] - eta[m - 1]) / (eta[m] + eta[m - 1])
    for i in range(m - 1, 0, -1):
        r = (eta[i] - eta[i - 1]) / (eta[i] + eta[i - 1])
        dd = sig_all[i] + 1j * (omega * EPS0 * eps_all[i])
        g = csqrt_c(jwmu * dd)
        e = cexp_c(-2.0 * g * d[i])
        xe = x * e
        x = (r + xe) / (1.0 + r * xe)

    dd = sig_all[0] + 1j * (omega * EPS0 * eps_all[0])
    g = csqrt_c(jwmu * dd)
    x_out[0] = x * cexp_c(-2.0 * g * d[0])


cdef void _jacobian_1f(
    double omega,
    const double* eps_all,
    const double* sig_all,
    const double* d,
    int m,
    double complex* x_out,
    double complex* jac_row,
) noexcept nogil:
    cdef double complex jwmu = 1j * (omega * MU0)
    cdef double complex D[MAXM + 1]
    cdef double complex eta[MAXM + 1]
    cdef double complex g[MAXM + 1]
    cdef double complex r[MAXM + 1]
    cdef double complex xs[MAXM + 1]
    cdef double complex E[MAXM]
    cdef double complex dx_dr[MAXM + 1]
    cdef double complex dx_dE[MAXM]
    cdef double complex chain, den, one_m_r2, xe, x0, E0
    cdef double complex s, dr_k, dr_next, dE_fac, deta, dgf, acc_e, acc_s
    cdef int i, k

    for i in range(m + 1):
        D[i] = sig_all[i] + 1j * (omega * EPS0 * eps_all[i])
        eta[i] = csqrt_c(jwmu / D[i])
        g[i] = csqrt_c(jwmu * D[i])

    for i in range(1, m + 1):
        r[i] = (eta[i] - eta[i - 1]) / (eta[i] + eta[i - 1])

    xs[m] = r[m]
    for i in range(m - 1, 0, -1):
        E[i] = cexp_c(-2.0 * g[i] * d[i])
        xe = xs[i + 1] * E[i]
        xs[i] = (r[i] + xe) / (1.0 + r[i] * xe)
    E0 = cexp_c(-2.0 * g[0] * d[0])
    x0 = xs[1] * E0
    x_out[0] = x0

    chain = E0
    for i in range(1, m):
        xe = xs[i + 1] * E[i]
        den = 1.0 + r[i] * xe
        den = den * den
        one_m_r2 = 1.0 - r[i] * r[i]
        dx_dr[i] = chain * (1.0 - xe * xe) / den
        dx_dE[i] = chain * xs[i + 1] * one_m_r2 / den
        chain = chain * E[i] * one_m_r2 / den
    dx_dr[m] = chain

    for k in range(1, m + 1):
        s = eta[k] + eta[k - 1]
        dr_k = 2.0 * eta[k - 1] / (s * s)
        # d(eta_k)/d(sig_k), then scaled by j*omega*EPS0 for eps_k
        deta = -eta[k] / (2.0 * D[k])
        dgf = jwmu / (2.0 * g[k])
        acc_e = dx_dr[k] * dr_k * (deta * (1j * (omega * EPS0)))
        acc_s = dx_dr[k] * dr_k * deta
        if k < m:
            s = eta[k + 1] + eta[k]
            dr_next = -2.0 * eta[k + 1] / (s * s)
            acc_e = acc_e + dx_dr[k + 1] * dr_next * (deta * (1j * (omega * EPS0)))
            acc_s = acc_s + dx_dr[k + 1] * dr_next * deta
        if k <= m - 1:
            dE_fac = -2.0 * d[k] * E[k]
            acc_e = acc_e + dx_dE[k] * dE_fac * (dgf * (1j * (omega * EPS0)))
            acc_s = acc_s + dx_dE[k] * dE_fac * dgf
        jac_row[k - 1] = acc_e
        jac_row[m + k - 1] = acc_s

    jac_row[2 * m] = -2.0 * g[0] * x0
    for k in range(1, m):
        jac_row[2 * m + k] = dx_dE[k] * (-2.0 * g[k] * E[k])


def reflectivity(eps, sig, d, double eps0, double sig0, omega):
    """Compiled counterpart of fallback.reflectivity (float inputs only)."""
    if np.iscomplexobj(eps) or np.iscomplexobj(sig) or np.iscomplexobj(d):
        return fallback.reflectivity(eps, sig, d, eps0, sig0, omega)

    cdef cnp.ndarray[double, ndim=1] eps_a = np.ascontiguousarray(eps, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] sig_a = np.ascontiguousarray(sig, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] d_a = np.ascontiguousarray(d, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] w_a = np.ascontiguousarray(omega, dtype=np.float64)

    cdef int m = eps_a.shape[0]
    cdef int n = w_a.shape[0]
    if m > MAXM:
        return fallback.reflectivity(eps, sig, d, eps0, sig0, omega)

    cdef double eps_all[MAXM + 1]
    cdef double sig_all[MAXM + 1]
    cdef int i
    eps_all[0] = eps0
    sig_all[0] = sig0
    for i in range(m):
        eps_all[i + 1] = eps_a[i]
        sig_all[i + 1] = sig_a[i]

    cdef cnp.ndarray[double complex, ndim=1] out = np.empty(n, dtype=np.complex128)
    with nogil:
        for i in range(n):
            _reflectivity_1f(w_a[i], eps_all, sig_all, &d_a[0], m, &out[i])
    return out


def reflectivity_jacobian(eps, sig, d, double eps0, double sig0, omega):
    """Compiled counterpart of fallback.reflectivity_jacobian."""
    if np.iscomplexobj(eps) or np.iscomplexobj(sig) or np.iscomplexobj(d):
        return fallback.reflectivity_jacobian(eps, sig, d, eps0, sig0, omega)

    cdef cnp.ndarray[double, ndim=1] eps_a = np.ascontiguousarray(eps, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] sig_a = np.ascontiguousarray(sig, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] d_a = np.ascontiguousarray(d, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] w_a = np.ascontiguousarray(omega, dtype=np.float64)

    cdef int m = eps_a.shape[0]
    cdef int n = w_a.shape[0]
    if m > MAXM:
        return fallback.reflectivity_jacobian(eps, sig, d, eps0, sig0, omega)

    cdef double eps_all[MAXM + 1]
    cdef double sig_all[MAXM + 1]
    cdef int i
    eps_all[0] = eps0
    sig_all[0] = sig0
    for i in range(m):
        eps_all[i + 1] = eps_a[i]
        sig_all[i + 1] = sig_a[i]

    cdef cnp.ndarray[double complex, ndim=1] x = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[double complex, ndim=2] jac = np.empty((n, 3 * m), dtype=np.complex128)
    with nogil:
        for i in range(n):
            _jacobian_1f(w_a[i], eps_all, sig_all, &d_a[0], m, &x[i], &jac[i, 0])
    return x, jac
