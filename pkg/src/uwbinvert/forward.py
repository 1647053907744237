"""Deterministic layered-media physics: impedances, reflection coefficients,
the recursive multilayer reflectivity, measurement synthesis, and analytic
parameter gradients."""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import MU0, EPS0, kernel_reflectivity, kernel_reflectivity_jacobian

__all__ = [
    "MU0",
    "EPS0",
    "LayerProfile",
    "FrequencyGrid",
    "LayerWaveParams",
    "ReflectivityWithGradient",
    "Measurement",
    "intrinsic_impedance",
    "layer_wave_params",
    "reflectivity",
    "reflectivity_gradient",
    "partial_dft",
    "synthesize_measurement",
    "snr_to_noise_variance",
]

# DPS half-bandwidth 8/46 mapped onto a 16 GHz pulse band
DEFAULT_DT = (8.0 / 46.0) / 16.0e9
DEFAULT_Q = 23


@dataclass(frozen=True)
class LayerProfile:
    """Per-layer permittivity, conductivity and thickness, plus the known
    host-medium constants.

    ``d[0]`` is the standoff distance travelled in the host medium,
    ``d[1:]`` are the thicknesses of layers 1..M-1; the deepest layer is
    semi-infinite.  The unknown parameter vector is
    ``theta = [eps_1..eps_M, sig_1..sig_M, d_0..d_{M-1}]`` (3M entries).
    """

    eps: np.ndarray
    sigma: np.ndarray
    d: np.ndarray
    eps0_medium: float = 1.0
    sigma0_medium: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "eps", np.asarray(self.eps, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        m = self.eps.size
        if self.sigma.size != m or self.d.size != m:
            raise ValueError("eps, sigma and d must all have length M")
        if m < 1:
            raise ValueError("at least one layer required")
        for name, arr in (("eps", self.eps), ("sigma", self.sigma), ("d", self.d)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(self.eps <= 0) or np.any(self.d <= 0) or np.any(self.sigma < 0):
            raise ValueError("eps and d must be positive, sigma nonnegative")
        if self.eps0_medium <= 0 or self.sigma0_medium < 0:
            raise ValueError("invalid host-medium constants")

    @property
    def n_layers(self):
        return self.eps.size

    @property
    def theta(self):
        """Flat parameter vector [eps, sigma, d] of length 3M."""
        return np.concatenate([self.eps, self.sigma, self.d])

    @classmethod
    def from_theta(cls, theta, eps0_medium=1.0, sigma0_medium=0.0):
        theta = np.asarray(theta, dtype=float)
        if theta.size % 3 != 0:
            raise ValueError("theta length must be a multiple of 3")
        m = theta.size // 3
        return cls(theta[:m], theta[m : 2 * m], theta[2 * m :], eps0_medium, sigma0_medium)


@dataclass(frozen=True)
class FrequencyGrid:
    """Measurement frequency grid plus the pulse time sampling.

    freqs holds N strictly increasing angular frequencies (rad/s), DC
    excluded; dt and Q describe the length-Q time-domain pulse.
    """

    freqs: np.ndarray
    dt: float = DEFAULT_DT
    Q: int = DEFAULT_Q

    def __post_init__(self):
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=float))
        if self.freqs.size == 0:
            raise ValueError("empty frequency grid")
        if np.any(self.freqs <= 0):
            raise ValueError("angular frequencies must be positive (no DC)")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("angular frequencies must be strictly increasing")
        if self.dt <= 0 or self.Q < 1:
            raise ValueError("dt must be positive and Q >= 1")

    @property
    def n(self):
        return self.freqs.size

    @classmethod
    def regular(cls, n=512, dt=DEFAULT_DT, q=DEFAULT_Q):
        """Regular grid omega_k = 2*pi*k*df, k = 1..n, df = fs/(2n), fs = 1/dt.

        The top frequency is the Nyquist rate fs/2; DC is excluded.
        """
        fs = 1.0 / dt
        df = fs / (2 * n)
        freqs = 2.0 * np.pi * df * np.arange(1, n + 1)
        return cls(freqs, dt, q)


@dataclass(frozen=True)
class LayerWaveParams:
    """Wave quantities of one medium/interface at a single frequency."""

    eta: complex
    r: complex
    alpha: float
    beta: float
    zeta: float


@dataclass(frozen=True)
class ReflectivityWithGradient:
    x: np.ndarray
    jac: np.ndarray  # (N, 3M) complex


@dataclass(frozen=True)
class Measurement:
    """Complex frequency-domain samples on a declared grid."""

    y: np.ndarray
    grid: FrequencyGrid
    truth: dict | None = field(default=None, compare=False)


def intrinsic_impedance(eps, sigma, omega):
    """Complex intrinsic impedance sqrt(j*omega*mu0 / (sigma + j*omega*eps0*eps)).

    Principal square root, so the real part is nonnegative.
    """
    if np.any(np.asarray(omega) <= 0):
        raise ValueError("omega must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    omega = np.asarray(omega, dtype=float)
    return np.sqrt(1j * omega * MU0 / (sigma + 1j * omega * EPS0 * eps))


def layer_wave_params(profile, layer_index, omega):
    """eta, r, alpha, beta, zeta for medium ``layer_index`` (1-based) at omega."""
    m = profile.n_layers
    if not 1 <= layer_index <= m:
        raise ValueError(f"layer_index must be in 1..{m}")
    eps_i = profile.eps[layer_index - 1]
    sig_i = profile.sigma[layer_index - 1]
    if layer_index == 1:
        eps_prev, sig_prev = profile.eps0_medium, profile.sigma0_medium
    else:
        eps_prev = profile.eps[layer_index - 2]
        sig_prev = profile.sigma[layer_index - 2]

    eta_i = complex(intrinsic_impedance(eps_i, sig_i, omega))
    eta_prev = complex(intrinsic_impedance(eps_prev, sig_prev, omega))
    zeta = float(np.sqrt(1.0 + (sig_i / (omega * EPS0 * eps_i)) ** 2))
    alpha = omega * np.sqrt(MU0 * EPS0 * eps_i * (zeta - 1.0) / 2.0)
    beta = omega * np.sqrt(MU0 * EPS0 * eps_i * (zeta + 1.0) / 2.0)
    return LayerWaveParams(
        eta=eta_i,
        r=(eta_i - eta_prev) / (eta_i + eta_prev),
        alpha=float(alpha),
        beta=float(beta),
        zeta=zeta,
    )


def reflectivity(profile, grid):
    """Reflectivity at the transmitter for every grid frequency."""
    return kernel_reflectivity(
        profile.eps,
        profile.sigma,
        profile.d,
        profile.eps0_medium,
        profile.sigma0_medium,
        grid.freqs,
    )


def reflectivity_gradient(profile, grid):
    """Reflectivity and its (N, 3M) Jacobian w.r.t. theta."""
    x, jac = kernel_reflectivity_jacobian(
        profile.eps,
        profile.sigma,
        profile.d,
        profile.eps0_medium,
        profile.sigma0_medium,
        grid.freqs,
    )
    return ReflectivityWithGradient(x=x, jac=jac)


def partial_dft(grid):
    """Partial DFT matrix F with F[n, q] = exp(-j * omega_n * q * dt), shape (N, Q)."""
    q = np.arange(grid.Q)
    return np.exp(-1j * grid.freqs[:, None] * grid.dt * q[None, :])


def snr_to_noise_variance(signal, snr_db):
    """Noise variance giving the requested per-sample average-power SNR."""
    power = float(np.mean(np.abs(signal) ** 2))
    return power / 10.0 ** (snr_db / 10.0)


def synthesize_measurement(profile, gamma, subspace, grid, sigma_v2, rng=None):
    """Simulate y = diag(F_Q A gamma) x + v on the grid.

    The noise is circularly symmetric complex Gaussian, i.i.d. with variance
    ``sigma_v2`` per sample (real and imaginary parts each sigma_v2 / 2).
    """
    subspace = np.asarray(subspace, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if subspace.shape[0] != grid.Q:
        raise ValueError("subspace row count must equal grid.Q")
    if subspace.shape[1] != gamma.size:
        raise ValueError("gamma length must equal subspace column count")
    if sigma_v2 < 0:
        raise ValueError("sigma_v2 must be nonnegative")

    h = subspace @ gamma
    s = (partial_dft(grid) @ h) * reflectivity(profile, grid)
    if sigma_v2 > 0:
        rng = np.random.default_rng(rng)
        scale = np.sqrt(sigma_v2 / 2.0)
        v = rng.normal(0.0, scale, grid.n) + 1j * rng.normal(0.0, scale, grid.n)
        y = s + v
    else:
        y = s
    return Measurement(y=y, grid=grid)
