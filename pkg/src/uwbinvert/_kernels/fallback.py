"""Pure-NumPy reflectivity kernels.

Reference implementation of the hot kernels; also used as the equivalence
oracle for the compiled core.  All functions are dtype-agnostic in the layer
parameters so that complex-step differentiation works on them.
"""

import numpy as np

MU0 = 4.0e-7 * np.pi
EPS0 = 8.8541878128e-12

IMPL = "python"


def _media_arrays(eps, sig, d, eps0, sig0):
    eps_all = np.concatenate(([eps0], np.asarray(eps)))
    sig_all = np.concatenate(([sig0], np.asarray(sig)))
    return eps_all, sig_all, np.asarray(d)


def reflectivity(eps, sig, d, eps0, sig0, omega):
    """Aggregate reflectivity at the transmitter for each angular frequency.

    Media are indexed 0..M with medium 0 the known host medium; interface i
    sits between media i-1 and i.  The recursion runs from the deepest
    interface back to the first, then the standoff propagation through the
    host medium is applied.

    Parameters
    ----------
    eps, sig : (M,) relative permittivity / conductivity of layers 1..M
    d : (M,) d[0] is the standoff distance in medium 0, d[1:] the layer
        thicknesses of media 1..M-1; the last medium is semi-infinite
    eps0, sig0 : host-medium constants
    omega : (N,) angular frequencies, all > 0

    Returns
    -------
    (N,) complex reflectivity values.
    """
    omega = np.asarray(omega, dtype=float)
    eps_all, sig_all, d = _media_arrays(eps, sig, d, eps0, sig0)
    M = len(eps_all) - 1

    jwmu = 1j * omega * MU0
    # admittance denominators D_i = sigma_i + j*omega*eps0*eps_i, media 0..M
    D = sig_all[:, None] + 1j * omega[None, :] * EPS0 * eps_all[:, None]
    eta = np.sqrt(jwmu[None, :] / D)

    x = (eta[M] - eta[M - 1]) / (eta[M] + eta[M - 1])
    for i in range(M - 1, 0, -1):
        r = (eta[i] - eta[i - 1]) / (eta[i] + eta[i - 1])
        g = np.sqrt(jwmu * D[i])  # propagation constant alpha + j*beta
        e = np.exp(-2.0 * g * d[i])
        xe = x * e
        x = (r + xe) / (1.0 + r * xe)

    g0 = np.sqrt(jwmu * D[0])
    return x * np.exp(-2.0 * g0 * d[0])


def reflectivity_jacobian(eps, sig, d, eps0, sig0, omega):
    """Reflectivity and its analytic Jacobian w.r.t. [eps, sig, d].

    Returns ``(x, jac)`` with ``jac`` of shape (N, 3M), columns ordered as the
    parameter vector [eps_1..eps_M, sig_1..sig_M, d_0..d_{M-1}].  Derivatives
    are obtained by differentiating the interface recursion: each Moebius step
    x_i = (r_i + x_{i+1} E_i) / (1 + r_i x_{i+1} E_i) contributes factors

        d x_i / d x_{i+1} = E_i (1 - r_i^2) / den^2
        d x_i / d r_i     = (1 - (x_{i+1} E_i)^2) / den^2
        d x_i / d E_i     = x_{i+1} (1 - r_i^2) / den^2

    which are accumulated front-to-back into a running chain factor.
    """
    omega = np.asarray(omega, dtype=float)
    eps_all, sig_all, d = _media_arrays(eps, sig, d, eps0, sig0)
    M = len(eps_all) - 1
    N = omega.size

    jwmu = 1j * omega * MU0
    D = sig_all[:, None] + 1j * omega[None, :] * EPS0 * eps_all[:, None]
    eta = np.sqrt(jwmu[None, :] / D)
    g = np.sqrt(jwmu[None, :] * D)

    # derivative helpers per medium: deta/deps, deta/dsig, dg/deps, dg/dsig
    deta_dsig = -eta / (2.0 * D)
    deta_deps = deta_dsig * (1j * omega[None, :] * EPS0)
    dg_dsig = jwmu[None, :] / (2.0 * g)
    dg_deps = dg_dsig * (1j * omega[None, :] * EPS0)

    r = np.empty((M + 1, N), dtype=complex)
    for i in range(1, M + 1):
        r[i] = (eta[i] - eta[i - 1]) / (eta[i] + eta[i - 1])

    # backward recursion, storing per-interface intermediates
    xs = np.empty((M + 1, N), dtype=complex)  # xs[i] = X_i
    E = np.zeros((M, N), dtype=complex)  # E[i] = exp(-2 g_i d_i), i=1..M-1
    xs[M] = r[M]
    for i in range(M - 1, 0, -1):
        E[i] = np.exp(-2.0 * g[i] * d[i])
        xe = xs[i + 1] * E[i]
        xs[i] = (r[i] + xe) / (1.0 + r[i] * xe)
    E0 = np.exp(-2.0 * g[0] * d[0])
    x0 = xs[1] * E0

    # forward accumulation of dX0/dr_i and dX0/dE_i
    dx_dr = np.empty((M + 1, N), dtype=complex)
    dx_dE = np.zeros((M, N), dtype=complex)
    chain = E0.copy()  # dX0/dX_1
    for i in range(1, M):
        den = 1.0 + r[i] * xs[i + 1] * E[i]
        den2 = den * den
        one_m_r2 = 1.0 - r[i] * r[i]
        xe = xs[i + 1] * E[i]
        dx_dr[i] = chain * (1.0 - xe * xe) / den2
        dx_dE[i] = chain * xs[i + 1] * one_m_r2 / den2
        chain = chain * E[i] * one_m_r2 / den2
    dx_dr[M] = chain

    # dr_i/deta pair factors
    jac = np.zeros((N, 3 * M), dtype=complex)
    for k in range(1, M + 1):  # medium k parameters eps_k, sig_k
        s = eta[k] + eta[k - 1]
        dr_deta_k = 2.0 * eta[k - 1] / (s * s)
        acc_eps = dx_dr[k] * dr_deta_k * deta_deps[k]
        acc_sig = dx_dr[k] * dr_deta_k * deta_dsig[k]
        if k < M:
            s2 = eta[k + 1] + eta[k]
            dr_next = -2.0 * eta[k + 1] / (s2 * s2)
            acc_eps = acc_eps + dx_dr[k + 1] * dr_next * deta_deps[k]
            acc_sig = acc_sig + dx_dr[k + 1] * dr_next * deta_dsig[k]
        if k <= M - 1:  # finite-thickness medium: E_k depends on eps_k, sig_k
            dE_fac = -2.0 * d[k] * E[k]
            acc_eps = acc_eps + dx_dE[k] * dE_fac * dg_deps[k]
            acc_sig = acc_sig + dx_dE[k] * dE_fac * dg_dsig[k]
        jac[:, k - 1] = acc_eps
        jac[:, M + k - 1] = acc_sig

    jac[:, 2 * M] = -2.0 * g[0] * x0  # standoff distance
    for k in range(1, M):
        jac[:, 2 * M + k] = dx_dE[k] * (-2.0 * g[k] * E[k])

    return x0, jac
