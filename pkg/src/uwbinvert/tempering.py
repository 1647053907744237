"""Parallel-tempering orchestration: temperature ladder, swap proposals, the
proportional-controller adaptation laws, the ladder convergence criterion,
and the four-stage slice-to-HMC sampling schedule."""

import hashlib
import pickle
from dataclasses import dataclass, field
from math import log

import numpy as np
from scipy.linalg import cholesky, eigh

from .samplers import (
    ChainState,
    HmcConfig,
    KernelStats,
    MhConfig,
    SliceConfig,
    ThetaConditional,
    gibbs_cycle,
    hmc_update,
    mh_update,
    slice_sweep,
)
from .diagnostics import TraceStore

__all__ = [
    "TemperatureLadder",
    "SwapLedger",
    "AdaptationConfig",
    "StageBudget",
    "SamplerSettings",
    "StageTimeout",
    "swap_log_acceptance",
    "swap_states",
    "propose_swap",
    "update_temperatures",
    "check_convergence",
    "update_step_sizes",
    "estimate_covariance",
    "PtGibbsRunner",
    "run",
]

STAGES = ("I", "II", "III", "IV")


class StageTimeout(RuntimeError):
    """A stage exceeded its configured cycle budget."""

    def __init__(self, stage, cycle, runner=None):
        super().__init__(f"stage {stage} did not finish within budget (cycle {cycle})")
        self.stage = stage
        self.cycle = cycle
        self.runner = runner


@dataclass
class TemperatureLadder:
    levels: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.validate()

    def validate(self):
        if self.levels[0] != 1.0:
            raise ValueError("lowest temperature must be 1")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("temperatures must be strictly increasing")

    @property
    def n_levels(self):
        return self.levels.size

    @classmethod
    def geometric(cls, n_levels, t_top, t_inner_low=None, t_inner_high=None):
        """Geometric ladder between 1 and t_top.

        Optionally the interior levels are squeezed into
        [t_inner_low, t_inner_high] (endpoints still pinned at 1 and t_top),
        matching initializations that start the interior away from its final
        spread.
        """
        if n_levels == 1:
            return cls(np.array([1.0]))
        if t_inner_low is None:
            levels = np.geomspace(1.0, t_top, n_levels)
        else:
            inner = np.geomspace(t_inner_low, t_inner_high, n_levels - 2)
            levels = np.concatenate([[1.0], inner, [t_top]])
        return cls(levels)


class SwapLedger:
    """Per-adjacent-pair swap counters over the current adaptation window,
    plus the per-window history of empirical swap ratios."""

    def __init__(self, n_levels):
        self.n_pairs = max(n_levels - 1, 0)
        self.proposed = np.zeros(self.n_pairs, dtype=int)
        self.accepted = np.zeros(self.n_pairs, dtype=int)
        self.window_history = []  # (proposed, accepted) per closed window

    def record(self, pair, accepted):
        self.proposed[pair] += 1
        if accepted:
            self.accepted[pair] += 1

    def ratios(self):
        return self.accepted / np.maximum(self.proposed, 1)

    def close_window(self):
        self.window_history.append((self.proposed.copy(), self.accepted.copy()))
        ratios = self.ratios()
        self.proposed[:] = 0
        self.accepted[:] = 0
        return ratios

    def trailing_ratios(self, n_windows):
        """Swap ratios aggregated over the last n_windows closed windows."""
        if not self.window_history:
            return self.ratios()
        hist = self.window_history[-n_windows:]
        prop = sum(h[0] for h in hist)
        acc = sum(h[1] for h in hist)
        return acc / np.maximum(prop, 1)

    def reset(self):
        self.proposed[:] = 0
        self.accepted[:] = 0
        self.window_history = []


@dataclass
class AdaptationConfig:
    """Controller constants for ladder and step-size adaptation."""

    K_T: float = 10.0
    J_T: int = 200
    N_T: int = 10
    K_eps: float = 0.5
    J_eps: int = 100
    xi: float = 0.85
    eps_init: float = 1e-2
    mh_target: float = 0.30
    mh_conc_init: float = 100.0
    convergence_rel_sd: float = 0.1

    def __post_init__(self):
        for name in ("K_T", "K_eps", "xi", "eps_init", "mh_target", "mh_conc_init",
                     "convergence_rel_sd"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("J_T", "N_T", "J_eps"):
            setattr(self, name, int(getattr(self, name)))
        if min(self.K_T, self.J_T, self.N_T, self.K_eps, self.J_eps) <= 0:
            raise ValueError("adaptation constants must be positive")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("target acceptance ratio must lie in (0, 1)")


@dataclass
class StageBudget:
    stage1_max: int = 20000
    stage2: int = 4000
    stage3_max: int = 20000
    stage4: int = 10000

    def __post_init__(self):
        for name in ("stage1_max", "stage2", "stage3_max", "stage4"):
            setattr(self, name, int(getattr(self, name)))


@dataclass
class SamplerSettings:
    """Everything the four-stage runner needs besides the problem itself."""

    n_levels: int = 16
    t_top: float = 1e5
    t_inner_low: float | None = None
    t_inner_high: float | None = None
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    budget: StageBudget = field(default_factory=StageBudget)
    kernel_arm: str = "hybrid"  # hybrid | slice | mh | hmc_identity
    hmc_delta: int = 10
    hmc_include_prior: bool = True
    slice_max_stepout: int = 64
    init_scheme: str = "prior"  # prior | uniform
    reset_swap_stats_between_stages: bool = True
    random_scan: bool = False

    def __post_init__(self):
        self.n_levels = int(self.n_levels)
        self.t_top = float(self.t_top)
        self.hmc_delta = int(self.hmc_delta)
        if self.t_inner_low is not None:
            self.t_inner_low = float(self.t_inner_low)
            self.t_inner_high = float(self.t_inner_high)
        if self.kernel_arm not in ("hybrid", "slice", "mh", "hmc_identity"):
            raise ValueError(f"unknown kernel arm {self.kernel_arm!r}")
        if self.n_levels < 1:
            raise ValueError("need at least one level")


def swap_log_acceptance(loglik_low, loglik_high, t_low, t_high):
    """Log acceptance probability (uncapped) of exchanging adjacent levels."""
    return (1.0 / t_high - 1.0 / t_low) * (loglik_low - loglik_high)


def propose_swap(chains, ladder, ledger, rng):
    """Propose exchanging the states of one uniformly chosen adjacent pair.

    Returns (pair_index, accepted).  On acceptance the full (theta, gamma,
    sigma_v2) triples along with their caches are exchanged; per-level kernel
    statistics stay with their levels.
    """
    n = len(chains)
    if n < 2:
        return None, False
    pair = int(rng.integers(0, n - 1))
    log_alpha = swap_log_acceptance(
        chains[pair].loglik, chains[pair + 1].loglik,
        ladder.levels[pair], ladder.levels[pair + 1],
    )
    accepted = log(rng.uniform()) < log_alpha
    ledger.record(pair, accepted)
    if accepted:
        swap_states(chains[pair], chains[pair + 1])
    return pair, accepted


def swap_states(a, b):
    """Exchange the sampled triple and caches of two chains (involution)."""
    for name in ("theta_bar", "gamma", "sigma_v2", "x", "u", "loglik"):
        tmp = getattr(a, name)
        setattr(a, name, getattr(b, name))
        setattr(b, name, tmp)


def update_temperatures(ladder, ratios, k_t):
    """One proportional-controller update of the ladder log-gaps.

    Gap ell is driven by e_ell = s_{ell+1} - s_ell; afterwards all gaps are
    rescaled by a common factor so the endpoints stay pinned.
    """
    if ladder.frozen:
        raise RuntimeError("ladder is frozen")
    t = ladder.levels
    n = t.size
    if n < 2:
        return ladder
    gaps = np.diff(t)
    log_gaps = np.log(gaps)
    if n > 2:
        e = np.asarray(ratios)[1:] - np.asarray(ratios)[:-1]  # pairs 1..L-2
        log_gaps[: n - 2] -= k_t * e
    new_gaps = np.exp(log_gaps)
    span = t[-1] - t[0]
    new_gaps *= span / new_gaps.sum()
    # keep the ladder strictly increasing in float even under extreme errors
    new_gaps = np.maximum(new_gaps, 1e-10 * span)
    new_gaps *= span / new_gaps.sum()
    ladder.levels = np.concatenate([[t[0]], t[0] + np.cumsum(new_gaps)])
    ladder.levels[-1] = t[-1]  # exact pinning against cumsum roundoff
    ladder.validate()
    return ladder


def check_convergence(history, n_t, rel_sd=0.1):
    """True iff every level's relative sd over the last n_t snapshots <= rel_sd."""
    if len(history) < n_t:
        return False
    window = np.asarray(history[-n_t:], dtype=float)
    means = window.mean(axis=0)
    sds = window.std(axis=0, ddof=1)
    return bool(np.all(sds <= rel_sd * means))


def update_step_sizes(eps, acceptance_ratios, xi, k_eps):
    """Proportional controller on log step size toward target acceptance xi."""
    e = xi - np.asarray(acceptance_ratios)
    return np.asarray(eps) * np.exp(-e * k_eps)


def estimate_covariance(samples, ridge=1e-8, eig_floor=1e-10):
    """Regularized sample covariance of a (n, dim) trace in normalized coords."""
    samples = np.asarray(samples)
    n, dim = samples.shape
    if n < 10 * dim:
        raise ValueError(f"need at least {10 * dim} samples for a {dim}-dim covariance")
    cov = np.cov(samples, rowvar=False)
    cov = np.atleast_2d(cov) + ridge * np.eye(dim)
    vals, vecs = eigh(cov)
    vals = np.maximum(vals, eig_floor)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)


class _SliceDriver:
    def __init__(self, cfg, random_scan=False):
        self.cfg = cfg
        self.random_scan = random_scan

    def __call__(self, chain, problem, T, rng):
        target = ThetaConditional(problem, chain.u, chain.sigma_v2, T)
        order = None
        if self.random_scan:
            order = rng.permutation(chain.theta_bar.size)
        theta, _, x = slice_sweep(
            chain.theta_bar, target.logpdf, self.cfg, rng, stats=chain.stats, order=order
        )
        chain.theta_bar = theta
        chain.x = x


class _HmcDriver:
    def __init__(self, cfg):
        self.cfg = cfg
        self._chol = None if cfg.weight is None else cholesky(cfg.weight, lower=True)

    def set_weight(self, weight):
        self.cfg.weight = weight
        self._chol = cholesky(weight, lower=True)

    def __call__(self, chain, problem, T, rng):
        target = ThetaConditional(
            problem, chain.u, chain.sigma_v2, T, include_prior=self.cfg.include_prior
        )
        theta, accepted, x = hmc_update(
            chain.theta_bar, target, self.cfg, rng, stats=chain.stats, weight_chol=self._chol
        )
        if accepted:
            chain.theta_bar = theta
            chain.x = x


class _MhDriver:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, chain, problem, T, rng):
        target = ThetaConditional(problem, chain.u, chain.sigma_v2, T)
        theta, accepted, _, x = mh_update(
            chain.theta_bar, target, self.cfg, rng, stats=chain.stats
        )
        if accepted:
            chain.theta_bar = theta
            chain.x = x


class PtGibbsRunner:
    """Four-stage adaptive parallel-tempered Gibbs sampler.

    Stage I adapts the temperature ladder with the slice kernel; Stage II
    collects per-level covariance estimates; Stage III switches to HMC with
    the estimated covariance as kinetic-energy weighting and adapts step
    sizes; Stage IV samples with everything frozen.  The 'slice' and 'mh'
    kernel arms keep their kernel across all stages (the MH arm adapts its
    proposal concentration during burn-in instead of step sizes).
    """

    def __init__(self, problem, settings, seed, workers=1):
        self.problem = problem
        self.settings = settings
        self.seed = seed
        self.workers = max(int(workers), 1)
        self._pool = None

        dim = problem.box.dim
        n_levels = settings.n_levels
        seq = np.random.SeedSequence(seed)
        children = seq.spawn(n_levels + 1)
        self.rng = np.random.default_rng(children[0])
        self.level_rngs = [np.random.default_rng(c) for c in children[1:]]

        self.ladder = TemperatureLadder.geometric(
            n_levels, settings.t_top, settings.t_inner_low, settings.t_inner_high
        )
        self.ledger = SwapLedger(n_levels)
        self.chains = [self._init_chain(self.level_rngs[l]) for l in range(n_levels)]

        arm = settings.kernel_arm
        slice_cfg = SliceConfig(np.ones(dim), settings.slice_max_stepout)
        if arm == "mh":
            self.mh_cfgs = [MhConfig(settings.adaptation.mh_conc_init) for _ in range(n_levels)]
            self.drivers = [_MhDriver(cfg) for cfg in self.mh_cfgs]
        else:
            self.drivers = [
                _SliceDriver(slice_cfg, settings.random_scan) for _ in range(n_levels)
            ]
        self.slice_cfg = slice_cfg

        self.stage = 1
        self.cycle = 0
        self.stage_start = 0
        self.stage_bounds = {}
        self.ladder_history = []
        self.eps_history = []
        self.conc_history = []
        self.swap_ratio_history = []
        self.covariances = None
        self.eps = np.full(n_levels, settings.adaptation.eps_init)
        self.stage_stats = []  # (stage, level, stats dict) snapshots
        self.adaptation_hash_stage4 = None
        self.end_of_stage1_ratios = None

        self.trace = TraceStore.empty(
            n_levels=n_levels,
            n_params=dim,
            n_gamma=problem.pulse_prior.L,
            meta={
                "seed": seed,
                "kernel_arm": arm,
                "n_levels": n_levels,
                "param_names": _param_names(problem.n_layers),
            },
        )

    # -- initialization -------------------------------------------------

    def _init_chain(self, rng):
        settings = self.settings
        problem = self.problem
        if settings.init_scheme == "prior":
            theta_bar = problem.theta_prior.sample(rng)
            theta_bar = np.clip(theta_bar, 1e-6, 1.0 - 1e-6)
        elif settings.init_scheme == "uniform":
            theta_bar = rng.uniform(0.02, 0.98, problem.box.dim)
        else:
            raise ValueError(f"unknown init scheme {settings.init_scheme!r}")
        gamma = rng.normal(0.0, np.sqrt(problem.pulse_prior.sigma_gamma2), problem.pulse_prior.L)
        sigma_v2 = float(np.mean(np.abs(problem.y) ** 2)) or 1.0
        chain = ChainState(theta_bar=theta_bar, gamma=gamma, sigma_v2=sigma_v2)
        chain.refresh(problem)
        return chain

    # -- main loop ------------------------------------------------------

    def run(self):
        while self.stage <= 4:
            self.step()
        return self

    def step(self):
        """One full cycle: Gibbs on every level, a swap proposal, adaptation.

        Chains advance independently (optionally on a thread pool); the swap
        proposal acts as the synchronization barrier.  Results are identical
        for any worker count because every chain owns its RNG stream.
        """
        problem = self.problem

        def advance(l):
            gibbs_cycle(self.chains[l], problem, self.ladder.levels[l],
                        self.drivers[l], self.level_rngs[l])

        if self.workers > 1 and self.settings.n_levels > 1:
            if self._pool is None:
                from concurrent.futures import ThreadPoolExecutor

                self._pool = ThreadPoolExecutor(max_workers=self.workers)
            list(self._pool.map(advance, range(self.settings.n_levels)))
        else:
            for l in range(self.settings.n_levels):
                advance(l)
        propose_swap(self.chains, self.ladder, self.ledger, self.rng)
        self.cycle += 1
        self._record()
        self._adapt()

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_pool"] = None
        return state

    def _record(self):
        problem = self.problem
        for l, chain in enumerate(self.chains):
            theta = problem.box.denormalize(chain.theta_bar)
            lp = (
                chain.loglik / self.ladder.levels[l]
                + problem.theta_prior.logpdf(chain.theta_bar)
                + problem.pulse_prior.logpdf(chain.gamma)
                + problem.noise_prior.logpdf(chain.sigma_v2)
            )
            self.trace.append(l, self.cycle, self.stage, theta, chain.gamma,
                              chain.sigma_v2, chain.loglik, lp)

    # -- adaptation machinery -------------------------------------------

    def _adapt(self):
        stage = self.stage
        if stage == 1:
            self._adapt_stage1()
        elif stage == 2:
            self._adapt_stage2()
        elif stage == 3:
            self._adapt_stage3()
        else:
            if self.cycle - self.stage_start >= self.settings.budget.stage4:
                self._finish_stage4()

    def _adapt_stage1(self):
        ad = self.settings.adaptation
        in_stage = self.cycle - self.stage_start
        if self.settings.n_levels == 1:
            self._enter_stage(2)
            return
        if in_stage % ad.J_T == 0:
            ratios = self.ledger.close_window()
            self.swap_ratio_history.append(ratios)
            if not self.ladder.frozen:
                update_temperatures(self.ladder, ratios, ad.K_T)
            self.ladder_history.append(self.ladder.levels.copy())
            converged = (
                in_stage >= 2 * ad.N_T * ad.J_T
                and check_convergence(self.ladder_history, ad.N_T, ad.convergence_rel_sd)
            )
            if converged:
                self.end_of_stage1_ratios = self.ledger.trailing_ratios(ad.N_T)
                self.ladder.frozen = True
                self._enter_stage(2)
                return
        if self.settings.kernel_arm == "mh":
            self._adapt_mh_concentration()
        if in_stage >= self.settings.budget.stage1_max:
            raise StageTimeout("I", self.cycle, self)

    def _adapt_stage2(self):
        if self.cycle - self.stage_start >= self.settings.budget.stage2:
            arm = self.settings.kernel_arm
            window = (self.stage_start, self.cycle)
            self._enter_stage(3)
            if arm in ("hybrid", "hmc_identity"):
                self._estimate_covariances(window)
                self._switch_to_hmc()
            elif arm == "slice":
                # slice arm has no step-size stage; go straight to sampling
                self._enter_stage(4)
            return
        if self.settings.kernel_arm == "mh":
            self._adapt_mh_concentration()

    def _adapt_stage3(self):
        ad = self.settings.adaptation
        in_stage = self.cycle - self.stage_start
        arm = self.settings.kernel_arm
        if arm == "mh":
            self._adapt_mh_concentration()
            history = self.conc_history
        else:
            if in_stage % ad.J_eps == 0:
                acc = np.array([c.stats.acceptance_ratio for c in self.chains])
                self.eps = update_step_sizes(self.eps, acc, ad.xi, ad.K_eps)
                for driver, eps in zip(self.drivers, self.eps):
                    driver.cfg.epsilon = float(eps)
                for chain in self.chains:
                    chain.stats.reset()
                self.eps_history.append(self.eps.copy())
            history = self.eps_history
        if len(history) >= ad.N_T and check_convergence(history, ad.N_T, ad.convergence_rel_sd):
            self._enter_stage(4)
            return
        if in_stage >= self.settings.budget.stage3_max:
            raise StageTimeout("III", self.cycle, self)

    def _adapt_mh_concentration(self):
        ad = self.settings.adaptation
        if (self.cycle - self.stage_start) % ad.J_eps != 0:
            return
        concs = []
        for cfg, chain in zip(self.mh_cfgs, self.chains):
            acc = chain.stats.acceptance_ratio
            # acceptance below target -> narrower proposals (higher concentration)
            cfg.concentration = float(cfg.concentration * np.exp((ad.mh_target - acc) * ad.K_eps))
            chain.stats.reset()
            concs.append(cfg.concentration)
        self.conc_history.append(np.array(concs))

    def _estimate_covariances(self, window):
        start, end = window
        self.covariances = []
        for l in range(self.settings.n_levels):
            theta = self.trace.theta_window(l, start, end)
            theta_bar = self.problem.box.normalize(theta)
            self.covariances.append(estimate_covariance(theta_bar))

    def _switch_to_hmc(self):
        ad = self.settings.adaptation
        dim = self.problem.box.dim
        identity_mass = self.settings.kernel_arm == "hmc_identity"
        self.drivers = []
        self.eps = np.full(self.settings.n_levels, ad.eps_init)
        for l in range(self.settings.n_levels):
            weight = np.eye(dim) if identity_mass else self.covariances[l]
            cfg = HmcConfig(
                epsilon=float(self.eps[l]),
                delta=self.settings.hmc_delta,
                weight=weight,
                include_prior=self.settings.hmc_include_prior,
            )
            self.drivers.append(_HmcDriver(cfg))
        for chain in self.chains:
            chain.stats.reset()

    def _enter_stage(self, stage):
        self._snapshot_stats()
        self.stage_bounds[STAGES[self.stage - 1]] = (self.stage_start, self.cycle)
        if self.settings.reset_swap_stats_between_stages:
            self.ledger.reset()
        self.stage = stage
        self.stage_start = self.cycle
        if stage == 4:
            self.adaptation_hash_stage4 = self.adaptation_hash()

    def _snapshot_stats(self):
        for l, chain in enumerate(self.chains):
            self.stage_stats.append(
                {"stage": STAGES[self.stage - 1], "level": l, **chain.stats.as_dict()}
            )
            chain.stats = KernelStats()

    def _finish_stage4(self):
        if self.adaptation_hash() != self.adaptation_hash_stage4:
            raise RuntimeError("adaptation state changed during Stage IV")
        self.stage_bounds["IV"] = (self.stage_start, self.cycle)
        self._snapshot_stats()
        self.stage = 5

    # -- introspection ---------------------------------------------------

    def adaptation_hash(self):
        """Hash of every adaptable quantity; must be constant across Stage IV."""
        h = hashlib.sha256()
        h.update(self.ladder.levels.tobytes())
        h.update(np.asarray(self.eps).tobytes())
        h.update(self.slice_cfg.widths.tobytes())
        if self.settings.kernel_arm == "mh":
            h.update(np.array([c.concentration for c in self.mh_cfgs]).tobytes())
        if self.covariances is not None:
            for cov in self.covariances:
                h.update(cov.tobytes())
        return h.hexdigest()

    def report(self):
        return {
            "seed": self.seed,
            "kernel_arm": self.settings.kernel_arm,
            "cycles": self.cycle,
            "stage_bounds": dict(self.stage_bounds),
            "final_ladder": self.ladder.levels.tolist(),
            "final_eps": np.asarray(self.eps).tolist(),
            "end_of_stage1_swap_ratios": (
                None if self.end_of_stage1_ratios is None else self.end_of_stage1_ratios.tolist()
            ),
            "swap_ratio_history": [r.tolist() for r in self.swap_ratio_history],
            "ladder_history": [t.tolist() for t in self.ladder_history],
            "kernel_stats": self.stage_stats,
            "adaptation_hash": self.adaptation_hash(),
        }

    def save(self, path):
        with open(path, "wb") as fh:
            pickle.dump(self, fh)

    @staticmethod
    def load(path):
        with open(path, "rb") as fh:
            runner = pickle.load(fh)
        if not isinstance(runner, PtGibbsRunner):
            raise TypeError("not a sampler checkpoint")
        return runner


def _param_names(m):
    return (
        [f"eps_{i}" for i in range(1, m + 1)]
        + [f"sigma_{i}" for i in range(1, m + 1)]
        + [f"d_{i}" for i in range(m)]
    )


def run(problem, settings, seed):
    """Execute the four-stage schedule; returns the finished runner."""
    runner = PtGibbsRunner(problem, settings, seed)
    return runner.run()
