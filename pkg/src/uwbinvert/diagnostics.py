"""Convergence and efficiency diagnostics (MPSRF, ACF/ACT), the MMSE and MAP
point estimators, and credibility intervals over persisted traces."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh

from .posterior import ModelState, gamma_conditional_moments, log_posterior_t
from .samplers import ThetaConditional

__all__ = [
    "TraceStore",
    "EstimateReport",
    "mpsrf",
    "mpsrf_curve",
    "acf",
    "act",
    "mmse_estimate",
    "map_estimate",
    "projected_gradient_ascent",
    "credibility_interval",
]


class TraceStore:
    """Per-level sample sequences with stage labels and run metadata.

    Rows are appended once per MCMC cycle per level; persisted as one CSV per
    level plus a JSON metadata sidecar (or float64 .npz with binary=True).
    """

    def __init__(self, n_levels, n_params, n_gamma, meta=None):
        self.n_levels = n_levels
        self.n_params = n_params
        self.n_gamma = n_gamma
        self.meta = dict(meta or {})
        self._rows = [[] for _ in range(n_levels)]

    @classmethod
    def empty(cls, n_levels, n_params, n_gamma, meta=None):
        return cls(n_levels, n_params, n_gamma, meta)

    def append(self, level, cycle, stage, theta, gamma, sigma_v2, loglik, logpost):
        row = np.empty(2 + self.n_params + self.n_gamma + 3)
        row[0] = cycle
        row[1] = stage
        row[2 : 2 + self.n_params] = theta
        row[2 + self.n_params : 2 + self.n_params + self.n_gamma] = gamma
        row[-3] = sigma_v2
        row[-2] = loglik
        row[-1] = logpost
        self._rows[level].append(row)

    # -- accessors -------------------------------------------------------

    def _matrix(self, level):
        rows = self._rows[level]
        if not rows:
            return np.empty((0, 2 + self.n_params + self.n_gamma + 3))
        return np.vstack(rows)

    def n_samples(self, level=0):
        return len(self._rows[level])

    def cycles(self, level=0):
        return self._matrix(level)[:, 0].astype(int)

    def stages(self, level=0):
        return self._matrix(level)[:, 1].astype(int)

    def theta(self, level=0):
        return self._matrix(level)[:, 2 : 2 + self.n_params]

    def gamma(self, level=0):
        m = self._matrix(level)
        return m[:, 2 + self.n_params : 2 + self.n_params + self.n_gamma]

    def sigma_v2(self, level=0):
        return self._matrix(level)[:, -3]

    def loglik(self, level=0):
        return self._matrix(level)[:, -2]

    def logpost(self, level=0):
        return self._matrix(level)[:, -1]

    def theta_window(self, level, start_cycle, end_cycle):
        """theta samples of cycles start_cycle+1 .. end_cycle (appended order)."""
        return self.theta(level)[start_cycle:end_cycle]

    def stage_slice(self, level, stage):
        """All rows recorded during the given stage (1..4)."""
        m = self._matrix(level)
        return m[m[:, 1].astype(int) == stage]

    def stage_theta(self, level, stage):
        rows = self.stage_slice(level, stage)
        return rows[:, 2 : 2 + self.n_params]

    # -- persistence ------------------------------------------------------

    def save(self, directory, binary=False):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = (
            ["cycle", "stage"]
            + [f"theta_{i}" for i in range(self.n_params)]
            + [f"gamma_{i}" for i in range(self.n_gamma)]
            + ["sigma_v2", "loglik", "logpost"]
        )
        meta = dict(self.meta)
        meta.update(
            n_levels=self.n_levels,
            n_params=self.n_params,
            n_gamma=self.n_gamma,
            columns=header,
            binary=bool(binary),
        )
        with open(directory / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, default=str)
        if binary:
            arrays = {f"level_{l:02d}": self._matrix(l) for l in range(self.n_levels)}
            np.savez(directory / "traces.npz", **arrays)
            return
        for l in range(self.n_levels):
            with open(directory / f"level_{l:02d}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for row in self._matrix(l):
                    writer.writerow([int(row[0]), int(row[1])] + [f"{v:.17g}" for v in row[2:]])

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        with open(directory / "meta.json") as fh:
            meta = json.load(fh)
        store = cls(meta["n_levels"], meta["n_params"], meta["n_gamma"], meta)
        if meta.get("binary"):
            data = np.load(directory / "traces.npz")
            for l in range(store.n_levels):
                store._rows[l] = list(data[f"level_{l:02d}"])
            return store
        for l in range(store.n_levels):
            rows = np.loadtxt(directory / f"level_{l:02d}.csv", delimiter=",", skiprows=1, ndmin=2)
            store._rows[l] = list(rows)
        return store


@dataclass
class EstimateReport:
    mmse: np.ndarray
    map: np.ndarray
    interval_lower: np.ndarray
    interval_upper: np.ndarray
    interval_level: float
    logpost_at_map: float


def mpsrf(runs, discard_first_half=True, ridge=1e-10):
    """Brooks-Gelman multivariate potential scale reduction factor.

    ``runs`` is a sequence of m >= 2 (n, dim) sample arrays from independent
    runs of the same target.  The statistic is
    (n-1)/n + ((m+1)/m) * lambda_max(W^-1 B/n) with W the average within-run
    covariance and B/n the covariance of the run means.
    """
    runs = [np.asarray(r, dtype=float) for r in runs]
    m = len(runs)
    if m < 2:
        raise ValueError("need at least two runs")
    if discard_first_half:
        runs = [r[r.shape[0] // 2 :] for r in runs]
    n = min(r.shape[0] for r in runs)
    runs = [r[-n:] for r in runs]
    dim = runs[0].shape[1]
    if n < 2 * dim:
        raise ValueError("need at least 2*dim retained samples per run")

    means = np.array([r.mean(axis=0) for r in runs])
    w = sum(np.cov(r, rowvar=False) for r in runs) / m
    w = np.atleast_2d(w)
    b_over_n = np.atleast_2d(np.cov(means, rowvar=False))

    try:
        lam = eigh(b_over_n, w, eigvals_only=True)[-1]
    except np.linalg.LinAlgError:
        w = w + ridge * np.eye(dim)
        lam = eigh(b_over_n, w, eigvals_only=True)[-1]
    return (n - 1) / n + (m + 1) / m * float(lam)


def mpsrf_curve(runs, step=100, min_len=None):
    """MPSRF evaluated on growing windows (second half of samples so far).

    Returns (iterations, values); feeds convergence-vs-iteration plots.
    """
    runs = [np.asarray(r, dtype=float) for r in runs]
    n = min(r.shape[0] for r in runs)
    dim = runs[0].shape[1]
    if min_len is None:
        min_len = max(4 * dim, 2 * step)
    its, vals = [], []
    for end in range(min_len, n + 1, step):
        try:
            vals.append(mpsrf([r[:end] for r in runs]))
            its.append(end)
        except ValueError:
            continue
    return np.array(its), np.array(vals)


def acf(series, max_lag):
    """Autocorrelation function with the biased (1/n) autocovariance estimator."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise ValueError("series shorter than max_lag")
    x = x - x.mean()
    if float(x @ x) == 0.0:
        raise ValueError("constant series has undefined autocorrelation")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    cov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / n
    return cov / cov[0]


def act(series, max_lag=None):
    """Integrated autocorrelation time with Geyer initial-positive truncation.

    tau = 1 + 2 sum_{k=1}^{K} rho(k), truncated just before the first
    nonpositive sum of adjacent autocorrelation pairs.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = n - 1
    rho = acf(x, max_lag)
    n_pairs = (rho.size - 1) // 2 + 1
    tau = 0.0
    for m in range(n_pairs):
        k = 2 * m
        gamma = rho[k] + (rho[k + 1] if k + 1 < rho.size else 0.0)
        if gamma <= 0.0:
            break
        tau += 2.0 * gamma
    # strongly antithetic chains can push the estimate to zero or below
    return max(tau - 1.0, 1e-2)


def effective_sample_size(series):
    return len(series) / act(series)


def mmse_estimate(samples, burn_in=0.0):
    """Componentwise mean of the post-burn-in samples."""
    samples = np.asarray(samples)
    start = int(np.floor(burn_in * samples.shape[0]))
    retained = samples[start:]
    if retained.shape[0] == 0:
        raise ValueError("burn-in leaves no samples")
    return retained.mean(axis=0)


def credibility_interval(samples, level=0.95):
    """Equal-tailed empirical credibility interval per parameter."""
    samples = np.asarray(samples)
    if samples.shape[0] == 0:
        raise ValueError("empty trace")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    lower = np.quantile(samples, tail, axis=0)
    upper = np.quantile(samples, 1.0 - tail, axis=0)
    return lower, upper


def projected_gradient_ascent(f_and_grad, x0, max_iter=500, grad_tol=1e-6,
                              armijo=1e-4, shrink=0.5, f_only=None):
    """Maximize f over the open unit box by projected gradient ascent.

    ``f_and_grad`` maps x to (f, grad); steps use backtracking line search
    (Armijo condition on the projected point), with ``f_only`` as a cheaper
    evaluator for the trial points when provided.  Terminates when the
    projected gradient infinity-norm drops below grad_tol.
    """
    x = np.asarray(x0, dtype=float).copy()
    f_eval = f_only if f_only is not None else (lambda z: f_and_grad(z)[0])
    step = 1.0
    for _ in range(max_iter):
        f0, grad = f_and_grad(x)
        projected = np.clip(x + grad, 1e-12, 1.0 - 1e-12)
        if np.max(np.abs(projected - x)) < grad_tol:
            break
        step = min(step * 2.0, 1.0)
        improved = False
        for _ in range(60):
            trial = np.clip(x + step * grad, 1e-12, 1.0 - 1e-12)
            f1 = f_eval(trial)
            if np.isfinite(f1) and f1 >= f0 + armijo * float(grad @ (trial - x)):
                x = trial
                improved = True
                break
            step *= shrink
        if not improved:
            break
    return x


def _joint_logpost(problem, theta_bar, gamma, sigma_v2):
    theta = problem.box.denormalize(theta_bar)
    return log_posterior_t(problem, ModelState(theta, gamma, sigma_v2), T=1.0)


def _profiled_nuisances(problem, x, fixpoint_iters=6):
    """Closed-form joint maximization of (gamma, sigma_v2) at fixed reflectivity.

    Alternates the conditional mean of gamma with the conditional
    Inverse-Gamma mode of sigma_v2 to a fixed point; deterministic in x.
    """
    n = problem.N
    alpha_v = problem.noise_prior.alpha_v
    beta_v = problem.noise_prior.beta_v
    sigma_v2 = float(np.mean(np.abs(problem.y) ** 2)) or 1.0
    gamma = None
    for _ in range(fixpoint_iters):
        gamma, _ = gamma_conditional_moments(
            problem.y, x, problem.B, sigma_v2, problem.pulse_prior.sigma_gamma2, 1.0
        )
        resid2 = problem.residual_norm2(x, problem.pulse_response(gamma))
        sigma_v2 = (beta_v + resid2) / (alpha_v + n + 1.0)
    return gamma, sigma_v2


def map_estimate(theta_samples, logpost, problem, max_iter=500, grad_tol=1e-6,
                 armijo=1e-4, shrink=0.5):
    """Joint MAP refinement started from the best-posterior sample.

    Projected gradient ascent on theta in normalized coordinates with
    backtracking line search, alternated with closed-form maximization of
    sigma_v2 (conditional Inverse-Gamma mode at T=1) and gamma (conditional
    mean).  Every objective evaluation, including line-search trials, uses
    the profiled nuisances, so valley moves that require a compensating
    (gamma, sigma_v2) adjustment are accepted; by the envelope theorem the
    theta gradient at the profiled point is the gradient of that objective.
    Returns (theta_map, gamma_map, sigma_v2_map, logpost_value).
    """
    theta_samples = np.asarray(theta_samples)
    order = np.argsort(np.asarray(logpost))[::-1]
    start = None
    for idx in order:
        candidate = problem.box.normalize(theta_samples[idx])
        if np.all(candidate > 0) and np.all(candidate < 1):
            start = candidate
            break
    if start is None:
        raise ValueError("no in-box sample to start from")

    def profiled(theta_bar):
        x = problem.reflectivity_bar(theta_bar)
        gamma, sigma_v2 = _profiled_nuisances(problem, x)
        return _joint_logpost(problem, theta_bar, gamma, sigma_v2), gamma, sigma_v2

    def f_and_grad(theta_bar):
        f0, gamma, sigma_v2 = profiled(theta_bar)
        if not np.isfinite(f0):
            return -np.inf, np.zeros_like(theta_bar)
        target = ThetaConditional(
            problem, problem.pulse_response(gamma), sigma_v2, 1.0, include_prior=True
        )
        _, grad_u, _ = target.potential_grad(theta_bar)
        return f0, -grad_u

    theta_bar = projected_gradient_ascent(
        f_and_grad, start, max_iter=max_iter, grad_tol=grad_tol,
        armijo=armijo, shrink=shrink,
    )
    lp, gamma, sigma_v2 = profiled(theta_bar)
    theta_map = problem.box.denormalize(theta_bar)
    return theta_map, gamma, sigma_v2, lp
