"""Pulse subspace construction (discrete prolate spheroidal sequences) and
ground-truth pulse synthesis for simulation."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = ["SubspaceSpec", "dps_basis", "gaussian_derivative_pulse", "project_pulse"]


@dataclass(frozen=True)
class SubspaceSpec:
    """Pulse length Q, basis size L and normalized half-bandwidth W."""

    Q: int = 23
    L: int = 8
    W: float = 8.0 / 46.0

    def __post_init__(self):
        if not 1 <= self.L <= self.Q:
            raise ValueError("need 1 <= L <= Q")
        if not 0.0 < self.W < 0.5:
            raise ValueError("W must lie in (0, 0.5)")


def dps_basis(spec):
    """First L discrete prolate spheroidal sequences as a (Q, L) matrix.

    Eigenvectors of the symmetric tridiagonal Slepian matrix with diagonal
    ((Q-1-2k)/2)^2 * cos(2*pi*W) and off-diagonal k(Q-k)/2, ordered by
    descending eigenvalue.  Columns are orthonormal and sign-normalized so
    the largest-magnitude entry of each is positive.
    """
    q, w = spec.Q, spec.W
    k = np.arange(q)
    diag = ((q - 1 - 2 * k) / 2.0) ** 2 * np.cos(2.0 * np.pi * w)
    off = np.arange(1, q) * (q - np.arange(1, q)) / 2.0
    vals, vecs = eigh_tridiagonal(diag, off)
    order = np.argsort(vals)[::-1][: spec.L]
    basis = vecs[:, order]
    peak = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[peak, np.arange(spec.L)])
    return basis * signs


def gaussian_derivative_pulse(fc, Q, dt):
    """Unit-energy first derivative of a Gaussian with spectral peak at fc."""
    if fc <= 0:
        raise ValueError("fc must be positive")
    t = np.arange(Q) * dt
    t0 = (Q - 1) * dt / 2.0
    s = 1.0 / (2.0 * np.pi * fc)
    h = -(t - t0) * np.exp(-((t - t0) ** 2) / (2.0 * s * s))
    return h / np.linalg.norm(h)


def project_pulse(h, basis):
    """Project a pulse onto the subspace; returns (gamma, residual energy)."""
    h = np.asarray(h, dtype=float)
    if h.size != basis.shape[0]:
        raise ValueError("pulse length must match basis rows")
    gamma = basis.T @ h
    resid = h - basis @ gamma
    return gamma, float(resid @ resid)
