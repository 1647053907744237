"""Priors, tempered likelihood, joint log-posterior and the two conjugate
conditionals (noise variance and pulse coefficients)."""

from dataclasses import dataclass
from math import lgamma, log, pi

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .forward import LayerProfile, partial_dft, reflectivity

__all__ = [
    "ParameterBox",
    "BetaPriorSpec",
    "PulsePriorSpec",
    "NoisePriorSpec",
    "ModelState",
    "InverseProblem",
    "log_prior_theta",
    "log_likelihood",
    "log_posterior_t",
    "sample_noise_conditional",
    "sample_gamma_conditional",
    "gamma_conditional_moments",
]


@dataclass(frozen=True)
class ParameterBox:
    """Componentwise bounds on theta with the [0,1] normalization map."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("bound shape mismatch")
        if np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")

    @property
    def dim(self):
        return self.lower.size

    @property
    def widths(self):
        return self.upper - self.lower

    @classmethod
    def for_layers(cls, m, eps_bounds=(2.0, 100.0), sigma_bounds=(5e-3, 3.0), d_bounds=(1e-3, 3e-2)):
        lo = np.concatenate([np.full(m, eps_bounds[0]), np.full(m, sigma_bounds[0]), np.full(m, d_bounds[0])])
        hi = np.concatenate([np.full(m, eps_bounds[1]), np.full(m, sigma_bounds[1]), np.full(m, d_bounds[1])])
        return cls(lo, hi)

    def normalize(self, theta):
        return (np.asarray(theta) - self.lower) / self.widths

    def denormalize(self, theta_bar):
        return self.lower + np.asarray(theta_bar) * self.widths

    def contains(self, theta):
        theta = np.asarray(theta)
        return bool(np.all(theta > self.lower) and np.all(theta < self.upper))


class BetaPriorSpec:
    """Independent Beta priors on normalized components, parametrized by
    mode lam and concentration kappa: a = lam*kappa + 1, b = (1-lam)*kappa + 1.

    kappa = 0 gives the flat prior on [0, 1].
    """

    def __init__(self, lam, kappa):
        self.lam = np.asarray(lam, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        if self.lam.shape != self.kappa.shape:
            raise ValueError("lam/kappa shape mismatch")
        if np.any(self.lam < 0) or np.any(self.lam > 1) or np.any(self.kappa < 0):
            raise ValueError("need lam in [0,1] and kappa >= 0")
        self.a = self.lam * self.kappa + 1.0
        self.b = (1.0 - self.lam) * self.kappa + 1.0
        # sum of -log B(a_i, b_i); constant across evaluations
        self._log_norm = float(
            sum(lgamma(a + b) - lgamma(a) - lgamma(b) for a, b in zip(self.a, self.b))
        )

    @property
    def dim(self):
        return self.lam.size

    @classmethod
    def flat(cls, dim):
        return cls(np.full(dim, 0.5), np.zeros(dim))

    def logpdf(self, theta_bar):
        theta_bar = np.asarray(theta_bar)
        if np.any(theta_bar <= 0.0) or np.any(theta_bar >= 1.0):
            return -np.inf
        return self._log_norm + float(
            np.dot(self.a - 1.0, np.log(theta_bar)) + np.dot(self.b - 1.0, np.log1p(-theta_bar))
        )

    def grad_logpdf(self, theta_bar):
        theta_bar = np.asarray(theta_bar)
        return (self.a - 1.0) / theta_bar - (self.b - 1.0) / (1.0 - theta_bar)

    def logpdf_1d(self, i, value):
        if not 0.0 < value < 1.0:
            return -np.inf
        return (self.a[i] - 1.0) * log(value) + (self.b[i] - 1.0) * np.log1p(-value)

    def sample(self, rng):
        return rng.beta(self.a, self.b)


@dataclass(frozen=True)
class PulsePriorSpec:
    """Zero-mean i.i.d. Gaussian prior on the pulse coefficients."""

    sigma_gamma2: float
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        if self.sigma_gamma2 <= 0:
            raise ValueError("sigma_gamma2 must be positive")
        gram = self.A.T @ self.A
        if not np.allclose(gram, np.eye(self.A.shape[1]), atol=1e-10):
            raise ValueError("subspace columns must be orthonormal")

    @property
    def L(self):
        return self.A.shape[1]

    def logpdf(self, gamma):
        gamma = np.asarray(gamma)
        n = gamma.size
        return -0.5 * n * log(2.0 * pi * self.sigma_gamma2) - 0.5 * float(gamma @ gamma) / self.sigma_gamma2


@dataclass(frozen=True)
class NoisePriorSpec:
    """Inverse-Gamma prior on the noise variance."""

    alpha_v: float = 1e-3
    beta_v: float = 1e-3

    def __post_init__(self):
        if self.alpha_v <= 0 or self.beta_v <= 0:
            raise ValueError("shape and scale must be positive")

    def logpdf(self, sigma_v2):
        if sigma_v2 <= 0:
            return -np.inf
        a, b = self.alpha_v, self.beta_v
        return a * log(b) - lgamma(a) - (a + 1.0) * log(sigma_v2) - b / sigma_v2


@dataclass
class ModelState:
    """One joint sample (theta, gamma, sigma_v2)."""

    theta: np.ndarray
    gamma: np.ndarray
    sigma_v2: float


class InverseProblem:
    """Measurement plus priors plus the precomputed pulse-response map.

    Bundles everything the Gibbs sampler and estimators need: the data y, the
    grid, B = F_Q A, the parameter box and the three prior specs.
    """

    def __init__(self, measurement, box, theta_prior, pulse_prior, noise_prior,
                 eps0_medium=1.0, sigma0_medium=0.0):
        if box.dim % 3 != 0:
            raise ValueError("box dimension must be 3M")
        if theta_prior.dim != box.dim:
            raise ValueError("theta prior dimension must match the box")
        self.measurement = measurement
        self.grid = measurement.grid
        self.y = np.asarray(measurement.y)
        self.box = box
        self.theta_prior = theta_prior
        self.pulse_prior = pulse_prior
        self.noise_prior = noise_prior
        self.eps0_medium = eps0_medium
        self.sigma0_medium = sigma0_medium
        self.n_layers = box.dim // 3
        self.B = partial_dft(self.grid) @ pulse_prior.A
        self.N = self.grid.n

    def profile(self, theta):
        return LayerProfile.from_theta(theta, self.eps0_medium, self.sigma0_medium)

    def profile_from_bar(self, theta_bar):
        return self.profile(self.box.denormalize(theta_bar))

    def reflectivity_bar(self, theta_bar):
        return reflectivity(self.profile_from_bar(theta_bar), self.grid)

    def pulse_response(self, gamma):
        return self.B @ gamma

    def residual_norm2(self, x, u):
        r = self.y - u * x
        return float(np.real(r @ np.conj(r)))


def log_prior_theta(theta, box, spec):
    """Sum of Beta log-densities of the normalized components; -inf outside."""
    if not box.contains(theta):
        return -np.inf
    return spec.logpdf(box.normalize(theta))


def log_likelihood(y, x, u, sigma_v2):
    """Circularly symmetric complex Gaussian log-likelihood.

    ``u`` is the pulse frequency response B @ gamma; the model mean is u * x.
    """
    n = y.size
    r = y - u * x
    return -n * log(pi * sigma_v2) - float(np.real(r @ np.conj(r))) / sigma_v2


def log_posterior_t(problem, state, T=1.0):
    """Partially tempered unnormalized log-posterior (likelihood^(1/T) * priors)."""
    if T < 1.0:
        raise ValueError("T must be >= 1")
    lp = log_prior_theta(state.theta, problem.box, problem.theta_prior)
    if not np.isfinite(lp):
        return -np.inf
    lp += problem.pulse_prior.logpdf(state.gamma)
    lp += problem.noise_prior.logpdf(state.sigma_v2)
    if not np.isfinite(lp):
        return -np.inf
    x = reflectivity(problem.profile(state.theta), problem.grid)
    u = problem.pulse_response(state.gamma)
    return lp + log_likelihood(problem.y, x, u, state.sigma_v2) / T


def sample_noise_conditional(resid_norm2, n, noise_prior, T, rng):
    """Draw sigma_v2 from IG(alpha_v + N/T, beta_v + ||r||^2 / T).

    For tiny shapes (extreme temperatures) the Gamma draw underflows, so the
    draw is formed in log space via the shape-boost identity
    Gamma(a) = Gamma(a+1) * U^(1/a); the result is capped at exp(690) to stay
    finite in double precision.
    """
    a = noise_prior.alpha_v + n / T
    b = noise_prior.beta_v + resid_norm2 / T
    if a >= 0.1:
        g = rng.gamma(shape=a)
        log_draw = log(b) - log(g)
    else:
        log_g = log(rng.gamma(shape=a + 1.0)) + log(rng.uniform()) / a
        log_draw = log(b) - log_g
    return float(np.exp(min(log_draw, 690.0)))


def gamma_conditional_moments(y, x, B, sigma_v2, sigma_gamma2, T):
    """Mean and precision Cholesky of the tempered Gaussian conditional of gamma.

    Returns (mean, chol) where chol is the lower Cholesky factor of the
    precision matrix (2/(T*sigma_v2)) Re{C^H C} + I/sigma_gamma2, C = diag(x) B.
    """
    scale = 2.0 / (T * sigma_v2)
    w = (np.abs(x) ** 2)[:, None] * B  # diag(|x|^2) B
    prec = scale * np.real(B.conj().T @ w)
    prec[np.diag_indices_from(prec)] += 1.0 / sigma_gamma2
    rhs = scale * np.real(B.conj().T @ (np.conj(x) * y))
    c, low = cho_factor(prec, lower=True)
    mean = cho_solve((c, low), rhs)
    return mean, c


def sample_gamma_conditional(y, x, B, sigma_v2, sigma_gamma2, T, rng):
    """Exact draw from the tempered Gaussian conditional of gamma."""
    mean, chol = gamma_conditional_moments(y, x, B, sigma_v2, sigma_gamma2, T)
    z = rng.standard_normal(mean.size)
    # precision = L L^T  =>  covariance draw is mean + L^-T z
    return mean + solve_triangular(chol, z, lower=True, trans="T")
