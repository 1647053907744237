"""Experiment configuration: a strict, versioned YAML schema and the factory
functions that turn a config into problem objects and sampler settings."""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .forward import DEFAULT_DT, FrequencyGrid, LayerProfile
from .posterior import BetaPriorSpec, InverseProblem, NoisePriorSpec, ParameterBox, PulsePriorSpec
from .presets import PRESETS
from .pulse import SubspaceSpec, dps_basis, gaussian_derivative_pulse, project_pulse
from .tempering import AdaptationConfig, SamplerSettings, StageBudget

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "config_from_dict",
    "config_hash",
    "build_grid",
    "build_profile",
    "build_subspace",
    "build_box",
    "build_priors",
    "build_problem",
    "build_sampler_settings",
    "true_gamma",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _require(mapping, section, allowed):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


@dataclass
class ProblemSpec:
    preset: str | None = "desk2"
    eps: list | None = None
    sigma: list | None = None
    d: list | None = None
    eps0_medium: float = 1.0
    sigma0_medium: float = 0.0


@dataclass
class GridSpec:
    n: int = 512
    q: int = 23
    dt: float | None = None


@dataclass
class PulseSpec:
    fc_ghz: float = 4.0
    basis_size: int = 8


@dataclass
class PriorSpecCfg:
    sigma_gamma2: float = 10.0
    alpha_v: float = 1e-3
    beta_v: float = 1e-3
    eps_bounds: tuple = (2.0, 100.0)
    sigma_bounds: tuple = (5e-3, 3.0)
    d_bounds: tuple = (1e-3, 3e-2)
    kappa: float = 100.0
    flat_last_layer: bool = True
    flat_all: bool = False
    modes: list | None = None  # normalized modes; default: normalized truth


@dataclass
class ExperimentConfig:
    seed: int = 0
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    pulse: PulseSpec = field(default_factory=PulseSpec)
    snr_db: float | None = 40.0
    priors: PriorSpecCfg = field(default_factory=PriorSpecCfg)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)

    def to_dict(self):
        def scrub(obj):
            if isinstance(obj, dict):
                return {k: scrub(v) for k, v in sorted(obj.items())}
            if isinstance(obj, (list, tuple)):
                return [scrub(v) for v in obj]
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            if isinstance(obj, (np.floating, np.integer)):
                return obj.item()
            return obj

        out = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "snr_db": self.snr_db,
            "problem": vars(self.problem),
            "grid": vars(self.grid),
            "pulse": vars(self.pulse),
            "priors": vars(self.priors),
            "sampler": {
                **{
                    k: v
                    for k, v in vars(self.sampler).items()
                    if k not in ("adaptation", "budget")
                },
                "adaptation": vars(self.sampler.adaptation),
                "budget": vars(self.sampler.budget),
            },
        }
        return scrub(out)


def config_hash(cfg):
    payload = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def config_from_dict(data):
    data = dict(data)
    _require(data, "config", {"schema_version", "seed", "snr_db", "problem", "grid",
                              "pulse", "priors", "sampler"})
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")

    problem_d = dict(data.get("problem", {}))
    _require(problem_d, "problem", {f.name for f in ProblemSpec.__dataclass_fields__.values()})
    problem = ProblemSpec(**problem_d)
    if problem.preset is not None and problem.preset not in PRESETS:
        raise ConfigError(f"unknown preset {problem.preset!r}")
    if problem.preset is None and (problem.eps is None or problem.sigma is None or problem.d is None):
        raise ConfigError("either a preset or explicit eps/sigma/d layers are required")

    grid_d = dict(data.get("grid", {}))
    _require(grid_d, "grid", {"n", "q", "dt"})
    grid = GridSpec(**grid_d)
    if grid.n < 1 or grid.q < 1:
        raise ConfigError("grid.n and grid.q must be positive")

    pulse_d = dict(data.get("pulse", {}))
    _require(pulse_d, "pulse", {"fc_ghz", "basis_size"})
    pulse = PulseSpec(**pulse_d)
    if pulse.basis_size > grid.q:
        raise ConfigError("pulse.basis_size must not exceed grid.q")

    priors_d = dict(data.get("priors", {}))
    _require(priors_d, "priors", {f.name for f in PriorSpecCfg.__dataclass_fields__.values()})
    for key in ("eps_bounds", "sigma_bounds", "d_bounds"):
        if key in priors_d:
            priors_d[key] = tuple(priors_d[key])
    priors = PriorSpecCfg(**priors_d)
    for name, (lo, hi) in (("eps", priors.eps_bounds), ("sigma", priors.sigma_bounds),
                           ("d", priors.d_bounds)):
        if not lo < hi:
            raise ConfigError(f"{name} bounds must be ordered low < high")

    sampler_d = dict(data.get("sampler", {}))
    adaptation = AdaptationConfig(**sampler_d.pop("adaptation", {}))
    budget = StageBudget(**sampler_d.pop("budget", {}))
    allowed = {f.name for f in SamplerSettings.__dataclass_fields__.values()} - {"adaptation", "budget"}
    _require(sampler_d, "sampler", allowed)
    sampler = SamplerSettings(adaptation=adaptation, budget=budget, **sampler_d)

    snr_db = data.get("snr_db", 40.0)
    return ExperimentConfig(
        seed=int(data.get("seed", 0)),
        problem=problem,
        grid=grid,
        pulse=pulse,
        snr_db=None if snr_db is None else float(snr_db),
        priors=priors,
        sampler=sampler,
    )


def load_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data)


def build_grid(cfg):
    dt = cfg.grid.dt if cfg.grid.dt is not None else DEFAULT_DT
    return FrequencyGrid.regular(cfg.grid.n, dt, cfg.grid.q)


def build_profile(cfg):
    p = cfg.problem
    if p.preset is not None:
        return PRESETS[p.preset]()
    return LayerProfile(np.asarray(p.eps), np.asarray(p.sigma), np.asarray(p.d),
                        p.eps0_medium, p.sigma0_medium)


def build_subspace(cfg):
    q = cfg.grid.q
    l = cfg.pulse.basis_size
    return dps_basis(SubspaceSpec(Q=q, L=l, W=l / (2.0 * q)))


def true_gamma(cfg, grid=None, subspace=None):
    """Coefficients of the ground-truth pulse in the analysis subspace."""
    grid = grid or build_grid(cfg)
    if subspace is None:
        subspace = build_subspace(cfg)
    h = gaussian_derivative_pulse(cfg.pulse.fc_ghz * 1e9, grid.Q, grid.dt)
    gamma, _ = project_pulse(h, subspace)
    return gamma


def build_box(cfg, n_layers):
    return ParameterBox.for_layers(
        n_layers, cfg.priors.eps_bounds, cfg.priors.sigma_bounds, cfg.priors.d_bounds
    )


def build_priors(cfg, profile, box):
    """Beta prior spec with modes at the normalized truth (paper-style typical
    values) unless explicit modes are configured or flat priors requested."""
    m = profile.n_layers
    dim = 3 * m
    pc = cfg.priors
    if pc.flat_all:
        theta_prior = BetaPriorSpec.flat(dim)
    else:
        if pc.modes is not None:
            modes = np.asarray(pc.modes, dtype=float)
            if modes.size != dim:
                raise ConfigError("priors.modes length must be 3M")
        else:
            modes = np.clip(box.normalize(profile.theta), 1e-6, 1 - 1e-6)
        kappa = np.full(dim, pc.kappa)
        if pc.flat_last_layer:
            kappa[m - 1] = 0.0  # eps of last layer
            kappa[2 * m - 1] = 0.0  # sigma of last layer
        theta_prior = BetaPriorSpec(modes, kappa)
    noise_prior = NoisePriorSpec(pc.alpha_v, pc.beta_v)
    return theta_prior, noise_prior


def build_problem(cfg, measurement, subspace=None):
    profile = build_profile(cfg)
    box = build_box(cfg, profile.n_layers)
    theta_prior, noise_prior = build_priors(cfg, profile, box)
    if subspace is None:
        subspace = build_subspace(cfg)
    pulse_prior = PulsePriorSpec(cfg.priors.sigma_gamma2, subspace)
    return InverseProblem(
        measurement, box, theta_prior, pulse_prior, noise_prior,
        profile.eps0_medium, profile.sigma0_medium,
    )


def build_sampler_settings(cfg):
    return cfg.sampler
