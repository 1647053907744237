"""Within-Gibbs kernels for the layer parameters (univariate slice sampling,
reflective HMC, adaptive-Beta Metropolis-Hastings) and the per-chain Gibbs
cycle: noise variance, pulse coefficients, then layer parameters."""

from dataclasses import dataclass, field
from math import log, pi, isfinite

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import betaln

from .forward import reflectivity_gradient
from .posterior import sample_noise_conditional, sample_gamma_conditional

__all__ = [
    "SliceConfig",
    "HmcConfig",
    "MhConfig",
    "KernelStats",
    "ChainState",
    "ThetaConditional",
    "slice_update",
    "slice_sweep",
    "leapfrog_step",
    "hmc_update",
    "mh_update",
    "gibbs_cycle",
]

MAX_SHRINK = 1000
LOG_SIGMA_V2_CAP = 690.0  # keeps exp() finite; binds only at extreme temperatures


@dataclass
class SliceConfig:
    widths: np.ndarray  # per-parameter initial interval widths (normalized coords)
    max_stepout: int = 64

    def __post_init__(self):
        self.widths = np.asarray(self.widths, dtype=float)
        if np.any(self.widths <= 0):
            raise ValueError("slice widths must be positive")


@dataclass
class HmcConfig:
    epsilon: float
    delta: int = 10
    weight: np.ndarray | None = None  # kinetic-energy weighting matrix, PD
    include_prior: bool = True

    def __post_init__(self):
        if self.epsilon <= 0 or self.delta < 1:
            raise ValueError("epsilon must be positive and delta >= 1")


@dataclass
class MhConfig:
    concentration: float

    def __post_init__(self):
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")


@dataclass
class KernelStats:
    proposals: int = 0
    acceptances: int = 0
    stepouts: int = 0
    shrinks: int = 0
    reflections: int = 0

    def reset(self):
        self.proposals = 0
        self.acceptances = 0
        self.stepouts = 0
        self.shrinks = 0
        self.reflections = 0

    @property
    def acceptance_ratio(self):
        return self.acceptances / self.proposals if self.proposals else 0.0

    def as_dict(self):
        return {
            "proposals": self.proposals,
            "acceptances": self.acceptances,
            "stepouts": self.stepouts,
            "shrinks": self.shrinks,
            "reflections": self.reflections,
        }


@dataclass
class ChainState:
    """Per-temperature-level sampler state: the joint sample plus caches.

    ``x`` is the reflectivity at the current theta, ``u`` the pulse frequency
    response B @ gamma, ``loglik`` the untempered log-likelihood.
    """

    theta_bar: np.ndarray
    gamma: np.ndarray
    sigma_v2: float
    x: np.ndarray | None = None
    u: np.ndarray | None = None
    loglik: float = np.nan
    stats: KernelStats = field(default_factory=KernelStats)

    def refresh(self, problem):
        """Recompute caches and the untempered log-likelihood."""
        self.x = problem.reflectivity_bar(self.theta_bar)
        self.u = problem.pulse_response(self.gamma)
        self.loglik = _loglik(problem, self)


def _loglik(problem, chain):
    r = problem.y - chain.u * chain.x
    resid2 = float(np.real(r @ np.conj(r)))
    return -problem.N * (log(pi) + log(chain.sigma_v2)) - resid2 / chain.sigma_v2


class ThetaConditional:
    """Tempered conditional of theta given (y, gamma, sigma_v2) at level T.

    Operates in normalized coordinates.  ``logpdf`` returns the conditional
    log-density up to a constant plus the reflectivity at the evaluated point;
    ``potential_grad`` returns the HMC potential and its gradient.
    """

    def __init__(self, problem, u, sigma_v2, T, include_prior=True):
        self.problem = problem
        self.u = u
        self.inv_tsv = 1.0 / (T * sigma_v2) if np.isfinite(sigma_v2) else 0.0
        self.include_prior = include_prior

    def logpdf(self, theta_bar):
        prior = self.problem.theta_prior.logpdf(theta_bar)
        if not np.isfinite(prior):
            return -np.inf, None
        x = self.problem.reflectivity_bar(theta_bar)
        r = self.problem.y - self.u * x
        resid2 = float(np.real(r @ np.conj(r)))
        return prior - resid2 * self.inv_tsv, x

    def potential_grad(self, theta_bar):
        """U = ||r||^2/(T sigma_v2) - log p(theta_bar) and its gradient."""
        theta_bar = np.asarray(theta_bar)
        if np.any(theta_bar <= 0.0) or np.any(theta_bar >= 1.0):
            return np.inf, None, None
        problem = self.problem
        prof = problem.profile_from_bar(theta_bar)
        rg = reflectivity_gradient(prof, problem.grid)
        x = rg.x
        r = problem.y - self.u * x
        resid2 = float(np.real(r @ np.conj(r)))
        # d resid2/d theta = -2 Re{(y - u x)^H diag(u) J}, chain-ruled to theta_bar
        v = np.conj(r) * self.u
        grad_resid2 = -2.0 * np.real(v @ rg.jac) * problem.box.widths
        u_val = resid2 * self.inv_tsv
        grad = grad_resid2 * self.inv_tsv
        if self.include_prior:
            u_val -= problem.theta_prior.logpdf(theta_bar)
            grad -= problem.theta_prior.grad_logpdf(theta_bar)
        return u_val, grad, x


def slice_update(theta_bar, index, target, widths, rng, max_stepout=64,
                 logp0=None, stats=None):
    """One univariate stepping-out/shrinkage slice update of component ``index``.

    ``target`` maps a full normalized vector to (logpdf, aux).  Returns
    (theta_bar, logp, aux) with the component replaced by the new value; the
    vector is modified in place.
    """
    if logp0 is None:
        logp0, _ = target(theta_bar)
    if not isfinite(logp0):
        raise RuntimeError("slice sampler started at a zero-density point")
    x0 = theta_bar[index]
    logy = logp0 + log(rng.uniform())

    w = widths[index]
    u = rng.uniform()
    left = x0 - u * w
    right = x0 + (1.0 - u) * w
    left = max(left, 0.0)
    right = min(right, 1.0)

    def eval_at(value):
        theta_bar[index] = value
        return target(theta_bar)

    steps = 0
    while left > 0.0:
        lp, _ = eval_at(left)
        if lp <= logy:
            break
        left = max(left - w, 0.0)
        steps += 1
        if steps > max_stepout:
            theta_bar[index] = x0
            raise RuntimeError("slice stepping-out cap exceeded (broken target?)")
    while right < 1.0:
        lp, _ = eval_at(right)
        if lp <= logy:
            break
        right = min(right + w, 1.0)
        steps += 1
        if steps > max_stepout:
            theta_bar[index] = x0
            raise RuntimeError("slice stepping-out cap exceeded (broken target?)")
    if stats is not None:
        stats.stepouts += steps

    for _ in range(MAX_SHRINK):
        xi = rng.uniform(left, right)
        lp, aux = eval_at(xi)
        if lp >= logy:
            return theta_bar, lp, aux
        if stats is not None:
            stats.shrinks += 1
        if xi < x0:
            left = xi
        else:
            right = xi
        if right - left < 1e-300:
            break
    theta_bar[index] = x0
    raise RuntimeError("slice shrinkage failed to find an acceptable point")


def slice_sweep(theta_bar, target, cfg, rng, stats=None, order=None):
    """Slice-update every coordinate once (ascending index by default)."""
    theta_bar = np.array(theta_bar, dtype=float)
    logp, aux = target(theta_bar)
    indices = range(theta_bar.size) if order is None else order
    for i in indices:
        theta_bar, logp, aux = slice_update(
            theta_bar, i, target, cfg.widths, rng, cfg.max_stepout, logp0=logp, stats=stats
        )
        if stats is not None:
            stats.proposals += 1
            stats.acceptances += 1
    return theta_bar, logp, aux


def leapfrog_step(theta, p, epsilon, weight, grad_u):
    """One leapfrog step: half momentum, full position, half momentum.

    ``weight`` enters the position update as theta += eps * weight @ p, i.e.
    the kinetic energy is K(p) = p^T weight p / 2.
    """
    p_half = p - 0.5 * epsilon * grad_u(theta)
    theta_new = theta + epsilon * (weight @ p_half)
    p_new = p_half - 0.5 * epsilon * grad_u(theta_new)
    return theta_new, p_new


def hmc_update(theta_bar, target, cfg, rng, stats=None, weight_chol=None):
    """Reflective HMC trajectory in the unit box; returns (theta, accepted, x).

    Momentum is drawn from N(0, weight^-1); a leapfrog step that exits the box
    is undone, the violated momentum components are negated, and the step is
    redone with the updated momentum.  Acceptance follows the usual
    Metropolis-Hastings energy-difference rule.
    """
    dim = theta_bar.size
    weight = cfg.weight if cfg.weight is not None else np.eye(dim)
    if weight_chol is None:
        weight_chol = cholesky(weight, lower=True)
    if stats is not None:
        stats.proposals += 1

    z = rng.standard_normal(dim)
    p = solve_triangular(weight_chol, z, lower=True, trans="T")

    u0, grad, x0 = target.potential_grad(theta_bar)
    if not np.isfinite(u0) or not np.all(np.isfinite(grad)):
        raise RuntimeError("HMC started at a point with non-finite potential")
    h0 = u0 + 0.5 * float(p @ (weight @ p))

    theta = theta_bar.copy()
    x = x0
    u_val = u0
    rejected = False
    max_reflect = 3 * dim
    for _ in range(cfg.delta):
        p_half = p - 0.5 * cfg.epsilon * grad
        theta_new = theta + cfg.epsilon * (weight @ p_half)
        n_ref = 0
        while np.any((theta_new <= 0.0) | (theta_new >= 1.0)):
            if n_ref >= max_reflect:
                rejected = True
                break
            viol = (theta_new <= 0.0) | (theta_new >= 1.0)
            p_half = p_half.copy()
            p_half[viol] = -p_half[viol]
            theta_new = theta + cfg.epsilon * (weight @ p_half)
            n_ref += 1
            if stats is not None:
                stats.reflections += 1
        if rejected:
            break
        u_new, grad_new, x_new = target.potential_grad(theta_new)
        if not np.isfinite(u_new) or not np.all(np.isfinite(grad_new)):
            rejected = True
            break
        p = p_half - 0.5 * cfg.epsilon * grad_new
        theta, grad, u_val, x = theta_new, grad_new, u_new, x_new

    if rejected:
        return theta_bar, False, x0

    h1 = u_val + 0.5 * float(p @ (weight @ p))
    if log(rng.uniform()) < h0 - h1:
        if stats is not None:
            stats.acceptances += 1
        return theta, True, x
    return theta_bar, False, x0


def _beta_mode_params(mode, concentration):
    a = mode * concentration + 1.0
    b = (1.0 - mode) * concentration + 1.0
    return a, b


def mh_update(theta_bar, target, cfg, rng, stats=None, logp0=None, x0=None):
    """Full-vector MH with independent mode-at-current Beta proposals."""
    if logp0 is None:
        logp0, x0 = target.logpdf(theta_bar)
    if stats is not None:
        stats.proposals += 1

    a_fwd, b_fwd = _beta_mode_params(theta_bar, cfg.concentration)
    proposal = rng.beta(a_fwd, b_fwd)
    logp1, x1 = target.logpdf(proposal)
    if not np.isfinite(logp1):
        return theta_bar, False, logp0, x0

    a_rev, b_rev = _beta_mode_params(proposal, cfg.concentration)
    log_q_fwd = float(
        np.sum((a_fwd - 1.0) * np.log(proposal) + (b_fwd - 1.0) * np.log1p(-proposal)
               - betaln(a_fwd, b_fwd))
    )
    log_q_rev = float(
        np.sum((a_rev - 1.0) * np.log(theta_bar) + (b_rev - 1.0) * np.log1p(-theta_bar)
               - betaln(a_rev, b_rev))
    )
    if log(rng.uniform()) < logp1 - logp0 + log_q_rev - log_q_fwd:
        if stats is not None:
            stats.acceptances += 1
        return proposal, True, logp1, x1
    return theta_bar, False, logp0, x0


def gibbs_cycle(chain, problem, T, kernel, rng):
    """One Gibbs iteration at temperature T: sigma_v2, gamma, then theta.

    ``kernel`` is a callable (chain, target, rng) -> None updating
    chain.theta_bar and chain.x in place (see tempering.KERNELS).
    """
    y = problem.y

    # Step 1: noise variance from its tempered Inverse-Gamma conditional
    r = y - chain.u * chain.x
    resid2 = float(np.real(r @ np.conj(r)))
    chain.sigma_v2 = sample_noise_conditional(resid2, problem.N, problem.noise_prior, T, rng)

    # Step 2: pulse coefficients from their tempered Gaussian conditional
    chain.gamma = sample_gamma_conditional(
        y, chain.x, problem.B, chain.sigma_v2, problem.pulse_prior.sigma_gamma2, T, rng
    )
    chain.u = problem.pulse_response(chain.gamma)

    # Step 3: layer parameters via the selected kernel
    kernel(chain, problem, T, rng)

    chain.loglik = _loglik(problem, chain)
    return chain
