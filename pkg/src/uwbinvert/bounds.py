"""Fisher information and Cramer-Rao lower bounds for the blind setting,
plus the N-RMSE comparison harness for estimators."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .forward import partial_dft, reflectivity_gradient, snr_to_noise_variance, synthesize_measurement

__all__ = ["FisherMatrix", "CrlbReport", "signal_jacobian", "fisher", "crlb", "nrmse_harness"]


@dataclass(frozen=True)
class FisherMatrix:
    """Fisher information over phi = (theta, gamma) at a fixed noise variance."""

    matrix: np.ndarray
    sigma_v2: float
    jac: np.ndarray  # d s_n / d phi_k, shape (N, 3M+L)
    signal: np.ndarray


@dataclass(frozen=True)
class CrlbReport:
    variances: np.ndarray
    nrmse: np.ndarray
    snr_db: float
    condition: float
    flagged: np.ndarray
    floored: bool


def signal_jacobian(profile, gamma, grid, subspace):
    """Noise-free signal s = diag(F_Q A gamma) x and its Jacobian over (theta, gamma).

    The theta block is diag(B gamma) times the reflectivity Jacobian; the
    gamma block entry (n, k) is B[n, k] x_n.
    """
    gamma = np.asarray(gamma, dtype=float)
    b = partial_dft(grid) @ np.asarray(subspace, dtype=float)
    rg = reflectivity_gradient(profile, grid)
    u = b @ gamma
    s = u * rg.x
    jac_theta = u[:, None] * rg.jac
    jac_gamma = rg.x[:, None] * b
    return s, np.hstack([jac_theta, jac_gamma])


def fisher(profile, gamma, grid, subspace, sigma_v2):
    """Fisher information [I]_ij = (2/sigma_v2) sum_n Re{ds_n*/dphi_j ds_n/dphi_i}."""
    if sigma_v2 <= 0:
        raise ValueError("sigma_v2 must be positive")
    s, jac = signal_jacobian(profile, gamma, grid, subspace)
    info = (2.0 / sigma_v2) * np.real(jac.conj().T @ jac)
    info = 0.5 * (info + info.T)
    return FisherMatrix(matrix=info, sigma_v2=sigma_v2, jac=jac, signal=s)


def crlb(fisher_matrix, phi_true, eig_floor_rel=1e-12):
    """Per-parameter CRLB variances and normalized-RMSE bounds.

    A numerically singular Fisher matrix is inverted through an
    eigenvalue-floored pseudo-inverse; parameters with significant weight on
    the floored eigendirections are flagged.
    """
    phi_true = np.asarray(phi_true, dtype=float)
    info = fisher_matrix.matrix
    vals, vecs = eigh(info)
    lam_max = float(vals[-1])
    if lam_max <= 0:
        raise ValueError("Fisher matrix is not positive semidefinite")
    floor = eig_floor_rel * lam_max
    floored_dirs = vals < floor
    inv_vals = 1.0 / np.maximum(vals, floor)
    cov = (vecs * inv_vals) @ vecs.T
    variances = np.maximum(np.diag(cov), 0.0)
    nrmse = np.sqrt(variances) / np.abs(phi_true)
    flagged = (
        np.any(np.abs(vecs[:, floored_dirs]) > 1e-3, axis=1)
        if np.any(floored_dirs)
        else np.zeros(phi_true.size, dtype=bool)
    )
    power = float(np.mean(np.abs(fisher_matrix.signal) ** 2))
    snr_db = 10.0 * np.log10(power / fisher_matrix.sigma_v2) if power > 0 else -np.inf
    return CrlbReport(
        variances=variances,
        nrmse=nrmse,
        snr_db=snr_db,
        condition=lam_max / float(max(vals[0], np.finfo(float).tiny)),
        flagged=flagged,
        floored=bool(np.any(floored_dirs)),
    )


def nrmse_harness(profile, estimator, snr_db, trials, gamma_true, grid, subspace, seed=0):
    """Empirical per-parameter N-RMSE of an estimator against the CRLB.

    ``estimator`` maps (measurement, trial_seed) to a theta estimate of
    length 3M; failed trials (exceptions or non-finite output) are excluded
    and counted.  Returns a dict with the paired empirical/bound table.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    theta_true = profile.theta
    noise_free = synthesize_measurement(profile, gamma_true, subspace, grid, 0.0)
    sigma_v2 = snr_to_noise_variance(noise_free.y, snr_db)

    fi = fisher(profile, gamma_true, grid, subspace, sigma_v2)
    phi_true = np.concatenate([theta_true, gamma_true])
    bound = crlb(fi, phi_true)

    seeds = np.random.SeedSequence(seed).spawn(trials)
    estimates, failures = [], 0
    for t in range(trials):
        rng = np.random.default_rng(seeds[t])
        measurement = synthesize_measurement(profile, gamma_true, subspace, grid, sigma_v2, rng)
        try:
            theta_hat = np.asarray(estimator(measurement, t))
            if theta_hat.shape != theta_true.shape or not np.all(np.isfinite(theta_hat)):
                raise ValueError("bad estimate")
        except Exception:
            failures += 1
            continue
        estimates.append(theta_hat)

    if len(estimates) < 2:
        raise RuntimeError("too few successful trials for an RMSE estimate")
    err = np.asarray(estimates) - theta_true
    rmse = np.sqrt(np.mean(err**2, axis=0))
    return {
        "theta_true": theta_true,
        "nrmse_empirical": rmse / np.abs(theta_true),
        "nrmse_bound": bound.nrmse[: theta_true.size],
        "crlb_variances": bound.variances[: theta_true.size],
        "snr_db": snr_db,
        "sigma_v2": sigma_v2,
        "trials": trials,
        "failures": failures,
    }
