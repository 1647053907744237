"""Command-line front end: simulate / sample / diagnose / crlb / nrmse.

Exit codes: 0 ok, 1 usage or validation error, 2 stage timeout,
3 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from . import diagnostics as diag
from .config import (
    ConfigError,
    build_grid,
    build_problem,
    build_profile,
    build_subspace,
    config_hash,
    load_config,
    true_gamma,
)
from .forward import Measurement, FrequencyGrid, snr_to_noise_variance, synthesize_measurement
from .tempering import PtGibbsRunner, StageTimeout

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TIMEOUT = 2
EXIT_NUMERIC = 3


def _fmt(value):
    return f"{value:.17g}"


def write_measurement(path, measurement, header):
    lines = ["# uwbinvert measurement v1"]
    for key, value in header.items():
        lines.append(f"# {key}={value}")
    lines.append("index,freq_hz,re,im")
    freqs_hz = measurement.grid.freqs / (2.0 * np.pi)
    for i, (f_hz, val) in enumerate(zip(freqs_hz, measurement.y)):
        lines.append(f"{i},{_fmt(f_hz)},{_fmt(val.real)},{_fmt(val.imag)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurement(path):
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    header[key.strip()] = value.strip()
                continue
            if line.startswith("index,"):
                continue
            parts = line.split(",")
            rows.append((float(parts[1]), float(parts[2]), float(parts[3])))
    if not rows:
        raise ValueError(f"no samples found in {path}")
    freqs_hz = np.array([r[0] for r in rows])
    y = np.array([complex(r[1], r[2]) for r in rows])
    grid = FrequencyGrid(2.0 * np.pi * freqs_hz, dt=float(header["dt"]), Q=int(header["q"]))
    return Measurement(y=y, grid=grid), header


def cmd_simulate(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    profile = build_profile(cfg)
    grid = build_grid(cfg)
    subspace = build_subspace(cfg)
    gamma = true_gamma(cfg, grid, subspace)

    noise_free = synthesize_measurement(profile, gamma, subspace, grid, 0.0)
    if args.noise_free or cfg.snr_db is None:
        sigma_v2 = 0.0
    else:
        sigma_v2 = snr_to_noise_variance(noise_free.y, cfg.snr_db)
    rng = np.random.default_rng(cfg.seed)
    measurement = synthesize_measurement(profile, gamma, subspace, grid, sigma_v2, rng)

    chash = config_hash(cfg)
    power = float(np.mean(np.abs(noise_free.y) ** 2))
    realized_snr = (
        float("inf") if sigma_v2 == 0.0
        else 10.0 * np.log10(power * measurement.y.size / float(np.sum(np.abs(measurement.y - noise_free.y) ** 2)))
    )
    header = {
        "config_hash": chash,
        "seed": cfg.seed,
        "sigma_v2": _fmt(sigma_v2),
        "snr_db": cfg.snr_db if not args.noise_free else "inf",
        "dt": _fmt(grid.dt),
        "q": grid.Q,
        "n": grid.n,
    }
    write_measurement(out / "measurement.csv", measurement, header)
    truth = {
        "config_hash": chash,
        "seed": cfg.seed,
        "theta": profile.theta.tolist(),
        "eps": profile.eps.tolist(),
        "sigma": profile.sigma.tolist(),
        "d": profile.d.tolist(),
        "gamma": gamma.tolist(),
        "sigma_v2": sigma_v2,
        "snr_db_nominal": cfg.snr_db,
        "snr_db_realized": realized_snr,
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    print(f"wrote {out / 'measurement.csv'} and {out / 'truth.json'}")
    return EXIT_OK


def cmd_sample(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)

    if args.resume:
        runner = PtGibbsRunner.load(args.resume)
        if runner.trace.meta.get("config_hash") not in (None, chash):
            print("checkpoint was produced by a different config", file=sys.stderr)
            return EXIT_USAGE
    else:
        if not args.measurement:
            print("a measurement file is required unless --resume is given", file=sys.stderr)
            return EXIT_USAGE
        measurement, header = read_measurement(args.measurement)
        grid = build_grid(cfg)
        if measurement.grid.n != grid.n or abs(measurement.grid.dt - grid.dt) > 1e-18:
            print("measurement grid does not match the config grid", file=sys.stderr)
            return EXIT_USAGE
        problem = build_problem(cfg, measurement)
        workers = args.workers if args.workers else cfg.sampler.n_levels
        runner = PtGibbsRunner(problem, cfg.sampler, cfg.seed, workers=workers)
        runner.trace.meta["config_hash"] = chash

    try:
        runner.run()
    except StageTimeout as exc:
        ckpt = out / "checkpoint.pkl"
        exc.runner.save(ckpt)
        (out / "report.json").write_text(json.dumps(exc.runner.report(), indent=2))
        print(f"stage timeout: {exc}; checkpoint at {ckpt}", file=sys.stderr)
        return EXIT_TIMEOUT
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    runner.trace.save(out / "traces", binary=args.binary)
    (out / "report.json").write_text(json.dumps(runner.report(), indent=2))
    print(f"wrote {out / 'traces'} and {out / 'report.json'}")
    return EXIT_OK


def cmd_diagnose(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stores = [diag.TraceStore.load(Path(d) / "traces" if (Path(d) / "traces").is_dir() else d)
              for d in args.trace_dirs]

    stage4 = [s.stage_theta(0, 4) for s in stores]
    usable = [t for t in stage4 if t.shape[0] > 0]
    if len(usable) != len(stage4):
        print("warning: some runs have no Stage IV samples; using full traces", file=sys.stderr)
        usable = [s.theta(0) for s in stores]

    if len(usable) >= 2:
        its, vals = diag.mpsrf_curve([s.theta(0) for s in stores], step=args.mpsrf_step)
        with open(out / "mpsrf.csv", "w") as fh:
            fh.write("iteration,mpsrf\n")
            for i, v in zip(its, vals):
                fh.write(f"{i},{_fmt(v)}\n")

    names = stores[0].meta.get("param_names") or [f"theta_{i}" for i in range(stores[0].n_params)]
    with open(out / "act.csv", "w") as fh:
        fh.write("run,parameter,act,ess\n")
        for r, theta in enumerate(usable):
            for k in range(theta.shape[1]):
                tau = diag.act(theta[:, k])
                fh.write(f"{r},{names[k]},{_fmt(tau)},{_fmt(theta.shape[0] / tau)}\n")

    report = {}
    samples = usable[0]
    mmse = diag.mmse_estimate(samples)
    lo, hi = diag.credibility_interval(samples, args.level)
    report["mmse"] = mmse.tolist()
    report["interval_lower"] = lo.tolist()
    report["interval_upper"] = hi.tolist()
    report["interval_level"] = args.level

    if args.config and args.measurement:
        cfg = load_config(args.config)
        measurement, _ = read_measurement(args.measurement)
        problem = build_problem(cfg, measurement)
        theta_map, gamma_map, sv2_map, lp = diag.map_estimate(
            stores[0].theta(0), stores[0].logpost(0), problem
        )
        report["map"] = theta_map.tolist()
        report["map_gamma"] = gamma_map.tolist()
        report["map_sigma_v2"] = sv2_map
        report["logpost_at_map"] = lp
    (out / "estimates.json").write_text(json.dumps(report, indent=2))
    print(f"wrote diagnostics to {out}")
    return EXIT_OK


def _parse_sweep(spec):
    lo, hi, count = spec.split(":")
    return np.linspace(float(lo), float(hi), int(count))


def cmd_crlb(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profile = build_profile(cfg)
    grid = build_grid(cfg)
    subspace = build_subspace(cfg)
    gamma = true_gamma(cfg, grid, subspace)
    noise_free = synthesize_measurement(profile, gamma, subspace, grid, 0.0)
    phi = np.concatenate([profile.theta, gamma])

    snrs = _parse_sweep(args.snr_sweep) if args.snr_sweep else [cfg.snr_db]
    names = (
        [f"eps_{i}" for i in range(1, profile.n_layers + 1)]
        + [f"sigma_{i}" for i in range(1, profile.n_layers + 1)]
        + [f"d_{i}" for i in range(profile.n_layers)]
        + [f"gamma_{i}" for i in range(gamma.size)]
    )
    with open(out / "crlb.csv", "w") as fh:
        fh.write("snr_db,parameter,true_value,crlb_variance,nrmse_bound,flagged\n")
        for snr in snrs:
            sigma_v2 = snr_to_noise_variance(noise_free.y, snr)
            fi = bounds_mod.fisher(profile, gamma, grid, subspace, sigma_v2)
            rep = bounds_mod.crlb(fi, phi)
            for k, name in enumerate(names):
                fh.write(
                    f"{_fmt(snr)},{name},{_fmt(phi[k])},{_fmt(rep.variances[k])},"
                    f"{_fmt(rep.nrmse[k])},{int(rep.flagged[k])}\n"
                )
    print(f"wrote {out / 'crlb.csv'}")
    return EXIT_OK


def cmd_nrmse(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profile = build_profile(cfg)
    grid = build_grid(cfg)
    subspace = build_subspace(cfg)
    gamma = true_gamma(cfg, grid, subspace)

    # flat priors mimic the maximum-likelihood estimator
    cfg.priors.flat_all = True

    def estimator(measurement, trial):
        problem = build_problem(cfg, measurement, subspace)
        runner = PtGibbsRunner(problem, cfg.sampler, cfg.seed + 1000 + trial)
        runner.run()
        theta_map, _, _, _ = diag.map_estimate(
            runner.trace.theta(0), runner.trace.logpost(0), problem
        )
        return theta_map

    table = bounds_mod.nrmse_harness(
        profile, estimator, cfg.snr_db, args.trials, gamma, grid, subspace, seed=cfg.seed
    )
    names = (
        [f"eps_{i}" for i in range(1, profile.n_layers + 1)]
        + [f"sigma_{i}" for i in range(1, profile.n_layers + 1)]
        + [f"d_{i}" for i in range(profile.n_layers)]
    )
    with open(out / "nrmse.csv", "w") as fh:
        fh.write("parameter,true_value,nrmse_empirical,nrmse_bound\n")
        for k, name in enumerate(names):
            fh.write(
                f"{name},{_fmt(table['theta_true'][k])},"
                f"{_fmt(table['nrmse_empirical'][k])},{_fmt(table['nrmse_bound'][k])}\n"
            )
    (out / "nrmse_meta.json").write_text(json.dumps(
        {"trials": table["trials"], "failures": table["failures"],
         "snr_db": table["snr_db"], "sigma_v2": table["sigma_v2"]}, indent=2))
    print(f"wrote {out / 'nrmse.csv'} ({table['failures']} failed trials)")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="uwbinvert",
                     description="Blind multilayer profile recovery from UWB radar measurements")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a measurement from a config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-free", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="run the four-stage tempered sampler")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-m", "--measurement")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--binary", action="store_true", help="save traces as npz")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="convergence diagnostics and estimates over traces")
    p.add_argument("trace_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("-c", "--config")
    p.add_argument("-m", "--measurement")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--mpsrf-step", type=int, default=100)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("crlb", help="Cramer-Rao bounds for a profile/SNR sweep")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snr-sweep", help="lo:hi:count in dB")
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("nrmse", help="empirical estimator N-RMSE vs the CRLB")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_nrmse)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
