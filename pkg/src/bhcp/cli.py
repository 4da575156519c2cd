"""Command-line entry point: config-driven runs with reproducible outputs.

Every command resolves a JSON config (flags override the matching keys),
validates it against the known schema (unknown keys are rejected with the
offending line when it can be located), runs, and writes a manifest
sufficient to reproduce every output byte-for-byte: the resolved config,
the seed, the package version, and a hash of the canonical config text.

Subcommands: forward, observe, invert, adapt-lambda, experiment.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_csv, write_json
from .adapt import adapt_lambda, save_trace
from .analysis import fit_slope, interior_decay, mc_errors, qq_correlation, sweep_lambda
from .forward import ForwardConfig, forward_solve
from .grid import make_grid, save_field
from .observe import NoiseModel, load_observation, observe, save_observation, uniform_sensors
from .operators import Coefficients, analytic_spectrum, assemble, partial_spectrum, save_spectrum
from .presets import initial_condition
from .tikhonov import TikhonovProblem, minimize, save_inversion

__all__ = ["main"]

_BRACKET_DEFAULTS = {
    "mc": {"qq_correlation_min": 0.99},
    "sweep-sigma": {"slope": [1.0, 1.5]},
    "sweep-n": {"slope": [-1.1, -0.5]},
    "sweep-fnorm": {"slope": [-1.6, -1.0]},
    "interior-decay": {"slope_rel_tol": 0.10},
    "spectral-check": {"growth_ratio_tol": 0.10},
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config schema and validation

_SCHEMA = {
    "grid": {"dim": int, "bounds": list, "nodes_per_axis": (int, list)},
    "coefficients": {"a": (int, float, str), "c": (int, float, str)},
    "time": {"T": (int, float), "dt": (int, float)},
    "initial": {
        "preset": str,
        "amplitude": (int, float),
        "frequency": int,
        "csv": str,
    },
    "sensors": {"per_axis": int},
    "noise": {"kind": str, "sigma": (int, float), "seed": int},
    "lambda": {
        "mode": str,
        "value": (int, float),
        "grid": dict,
        "tol": (int, float),
        "max_outer": int,
        "initial": (int, float, type(None)),
    },
    "solver": {"method": str, "tol": (int, float), "max_iter": (int, type(None))},
    "times": list,
    "observation": {"csv": str, "json": str},
    "experiment": {
        "kind": str,
        "replications": int,
        "replications_per_point": int,
        "lambda": (int, float),
        "sigmas": list,
        "per_axis_list": list,
        "amplitudes": list,
        "lambda_grid": dict,
        "modes": int,
        "times": int,
        "brackets": dict,
        "fit_start_fraction": (int, float),
    },
    "seed": int,
    "jobs": int,
    "output": str,
}

_LAMBDA_GRID_KEYS = {"min": (int, float), "max": (int, float), "points": int}


def _line_of_key(raw_text, key):
    for i, line in enumerate(raw_text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None


def _validate_section(section, schema, path, raw_text, errors):
    for key, value in section.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            line = _line_of_key(raw_text, key)
            loc = f" (line {line})" if line else ""
            errors.append(f"unknown key {where!r}{loc}")
            continue
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                errors.append(f"{where} must be an object")
            else:
                _validate_section(value, expected, where, raw_text, errors)
        else:
            if not isinstance(value, expected if isinstance(expected, tuple) else (expected,)):
                line = _line_of_key(raw_text, key)
                loc = f" (line {line})" if line else ""
                errors.append(f"{where} has the wrong type{loc}")


def validate_config(config, raw_text=""):
    """Reject unknown keys and mistyped values, reporting key paths and lines."""
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    errors = []
    _validate_section(config, _SCHEMA, "", raw_text, errors)
    lam_grid = config.get("lambda", {}).get("grid")
    if isinstance(lam_grid, dict):
        _validate_section(lam_grid, _LAMBDA_GRID_KEYS, "lambda.grid", raw_text, errors)
    exp_grid = config.get("experiment", {}).get("lambda_grid")
    if isinstance(exp_grid, dict):
        _validate_section(exp_grid, _LAMBDA_GRID_KEYS, "experiment.lambda_grid", raw_text, errors)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return config


def _require_sections(config, names):
    missing = [n for n in names if n not in config]
    if missing:
        raise ConfigError(f"config missing required section(s): {', '.join(missing)}")


# --------------------------------------------------------------------------
# builders

def _build_grid(config):
    gspec = config["grid"]
    return make_grid(gspec["dim"], gspec["bounds"], gspec["nodes_per_axis"])


def _build_coefficients(grid, config):
    """Constant coefficients, or nodal tables loaded from field CSV paths."""
    from .grid import Field, load_field

    cspec = config.get("coefficients", {"a": 1.0, "c": 0.0})

    def as_field(value, default):
        if isinstance(value, str):
            return load_field(value, grid=grid)
        return Field(grid, np.full(grid.n_nodes, float(value if value is not None else default)))

    return Coefficients(as_field(cspec.get("a"), 1.0), as_field(cspec.get("c"), 0.0))


def _build_forward(config, solver="auto"):
    grid = _build_grid(config)
    coeff = _build_coefficients(grid, config)
    op = assemble(grid, coeff)
    tspec = config["time"]
    cfg = ForwardConfig(op, T=float(tspec["T"]), dt=float(tspec["dt"]), solver=solver)
    return grid, coeff, cfg

def _noise_from(config, seed):
    nspec = dict(config.get("noise", {}))
    nspec.setdefault("kind", "gaussian")
    nspec.setdefault("sigma", 0.0)
    nspec.setdefault("seed", seed)
    return NoiseModel(kind=nspec["kind"], sigma=float(nspec["sigma"]), seed=int(nspec["seed"]))


def _lambda_grid(spec, default=(1e-6, 1e-1)):
    if spec is None:
        lo, hi = default
        points = int(round(24 * np.log10(hi / lo)))
        return np.logspace(np.log10(lo), np.log10(hi), points)
    lo, hi, points = float(spec["min"]), float(spec["max"]), int(spec["points"])
    return np.logspace(np.log10(lo), np.log10(hi), points)


def _manifest(out_dir, command, config, seed, jobs):
    canonical = json.dumps(config, sort_keys=True)
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": int(seed),
        "jobs": int(jobs),
        "version": __version__,
    }
    write_json(Path(out_dir) / "manifest.json", manifest)
    return manifest


def _resolve(args):
    if args.config:
        raw = Path(args.config).read_text()
        config = json.loads(raw)
    else:
        raw, config = "", {}
    validate_config(config, raw)
    if args.seed is not None:
        config["seed"] = int(args.seed)
    config.setdefault("seed", 0)
    if getattr(args, "lam", None) is not None:
        config.setdefault("lambda", {})["value"] = float(args.lam)
        config["lambda"].setdefault("mode", "fixed")
    if getattr(args, "mode", None):
        config.setdefault("lambda", {})["mode"] = args.mode
    if args.out:
        config["output"] = args.out
    if "output" not in config:
        raise ConfigError("no output directory: set --out or config 'output'")
    jobs = args.jobs or config.get("jobs") or int(os.environ.get("BHCP_JOBS", 0)) or (os.cpu_count() or 1)
    config["jobs"] = int(jobs)
    return config, Path(config["output"]), int(config["seed"]), int(jobs)


# --------------------------------------------------------------------------
# commands

def cmd_forward(args):
    config, out, seed, jobs = _resolve(args)
    _require_sections(config, ["grid", "time", "initial"])
    grid, _, cfg = _build_forward(config)
    f0 = initial_condition(grid, config["initial"])
    times = config.get("times", [cfg.T])
    solutions = [(float(t), forward_solve(cfg, f0, float(t))) for t in times]
    out.mkdir(parents=True, exist_ok=True)
    for t, u in solutions:
        save_field(u, out / f"field_t{t:.6g}.csv")
    save_field(solutions[-1][1], out / "field.csv")
    _manifest(out, "forward", config, seed, jobs)
    return 0


def _make_observation(config, cfg, grid, seed):
    if "observation" in config:
        spec = config["observation"]
        return load_observation(grid, spec["csv"], spec.get("json"))
    _require_sections(config, ["initial", "sensors"])
    f0 = initial_condition(grid, config["initial"])
    sensors = uniform_sensors(grid, config["sensors"]["per_axis"])
    noise = _noise_from(config, seed)
    return observe(cfg, f0, sensors, noise)


def cmd_observe(args):
    config, out, seed, jobs = _resolve(args)
    _require_sections(config, ["grid", "time", "initial", "sensors"])
    grid, _, cfg = _build_forward(config)
    obs = _make_observation(config, cfg, grid, seed)
    out.mkdir(parents=True, exist_ok=True)
    save_observation(obs, out / "observation.csv", out / "observation.json")
    _manifest(out, "observe", config, seed, jobs)
    return 0


def cmd_invert(args, force_adaptive=False):
    config, out, seed, jobs = _resolve(args)
    _require_sections(config, ["grid", "time"])
    grid, _, cfg = _build_forward(config)
    obs = _make_observation(config, cfg, grid, seed)
    lspec = dict(config.get("lambda", {}))
    mode = "adaptive" if force_adaptive else lspec.get("mode", "fixed")
    sspec = config.get("solver", {})
    method = sspec.get("method", "cg_normal")
    tol = float(sspec.get("tol", 1e-8))
    max_iter = sspec.get("max_iter")
    out.mkdir(parents=True, exist_ok=True)
    if mode == "adaptive":
        trace, result = adapt_lambda(
            obs,
            cfg,
            tol_lambda=float(lspec.get("tol", 1e-3)),
            max_outer=int(lspec.get("max_outer", 25)),
            lambda0=lspec.get("initial"),
            method=method,
            tol=tol,
            max_iter=max_iter,
        )
        save_trace(trace, out / "trace.csv")
        lam = trace.final_lambda
    elif mode == "fixed":
        lam = float(lspec.get("value", 1e-3))
        result = minimize(
            TikhonovProblem(cfg, obs, lam), method=method, tol=tol, max_iter=max_iter
        )
    else:
        raise ConfigError(f"invert does not support lambda mode {mode!r}")
    save_inversion(result, lam, out / "field.csv", out / "result.json")
    _manifest(out, "adapt-lambda" if force_adaptive else "invert", config, seed, jobs)
    return 0


def cmd_adapt_lambda(args):
    return cmd_invert(args, force_adaptive=True)


# --------------------------------------------------------------------------
# experiments

def _bracket_pass(value, lo_hi):
    lo, hi = lo_hi
    return bool(lo <= value <= hi)


def _experiment_mc(config, cfg, grid, seed, jobs, out, brackets):
    espec = config["experiment"]
    f0 = initial_condition(grid, config["initial"])
    sensors = uniform_sensors(grid, config["sensors"]["per_axis"])
    noise = _noise_from(config, seed)
    reps = int(espec.get("replications", 1000))
    lam = float(espec.get("lambda", config.get("lambda", {}).get("value", 1e-3)))
    summary = mc_errors(cfg, f0, sensors, noise, lam, reps, jobs=jobs)
    write_csv(out / "mc.csv", "rep,error", [np.arange(reps), summary.errors])
    corr = qq_correlation(summary.errors)
    passed = corr >= brackets["qq_correlation_min"]
    return {
        "kind": "mc",
        "lambda": lam,
        "replications": reps,
        "error_mean": summary.mean,
        "error_std": summary.std,
        "qq_correlation": corr,
        "brackets": brackets,
        "passed": passed,
    }


def _experiment_sweep(config, cfg, grid, seed, jobs, out, brackets, kind):
    espec = config["experiment"]
    sensors_spec = config["sensors"]["per_axis"]
    noise_spec = _noise_from(config, seed)
    reps = int(espec.get("replications_per_point", 4))
    lambdas = _lambda_grid(espec.get("lambda_grid"))
    xs, stars = [], []
    if kind == "sweep-sigma":
        values = [float(s) for s in espec.get("sigmas", [0.025, 0.05, 0.1, 0.2, 0.4, 0.8])]
        for sigma in values:
            f0 = initial_condition(grid, config["initial"])
            sensors = uniform_sensors(grid, sensors_spec)
            noise = NoiseModel(noise_spec.kind, sigma, noise_spec.seed)
            res = sweep_lambda(cfg, f0, sensors, noise, lambdas, replications=reps, jobs=jobs)
            xs.append(sigma)
            stars.append(res.lambda_star)
        header = "sigma,lambda_star"
    elif kind == "sweep-n":
        values = [int(p) for p in espec.get("per_axis_list", [4, 5, 10, 20])]
        f0 = initial_condition(grid, config["initial"])
        for p in values:
            sensors = uniform_sensors(grid, p)
            res = sweep_lambda(cfg, f0, sensors, noise_spec, lambdas, replications=reps, jobs=jobs)
            xs.append(sensors.n)
            stars.append(res.lambda_star)
        header = "n,lambda_star"
    else:  # sweep-fnorm
        values = [float(a) for a in espec.get("amplitudes", [0.25, 0.5, 1.0, 2.0, 4.0])]
        sensors = uniform_sensors(grid, sensors_spec)
        from .grid import l2_norm

        for amp in values:
            spec0 = dict(config["initial"])
            spec0["amplitude"] = amp * float(spec0.get("amplitude", 1.0))
            f0 = initial_condition(grid, spec0)
            res = sweep_lambda(cfg, f0, sensors, noise_spec, lambdas, replications=reps, jobs=jobs)
            xs.append(l2_norm(f0))
            stars.append(res.lambda_star)
        header = "f_norm,lambda_star"
    write_csv(out / "sweep.csv", header, [np.asarray(xs), np.asarray(stars)])
    fit = fit_slope(xs, stars, loglog=True)
    passed = _bracket_pass(fit.slope, brackets["slope"])
    return {
        "kind": kind,
        "x_values": [float(x) for x in xs],
        "lambda_star": [float(s) for s in stars],
        "slope": fit.slope,
        "correlation": fit.correlation,
        "brackets": brackets,
        "passed": passed,
    }


def _experiment_interior_decay(config, cfg, grid, seed, jobs, out, brackets):
    espec = config["experiment"]
    f0 = initial_condition(grid, config["initial"])
    sensors = uniform_sensors(grid, config["sensors"]["per_axis"])
    noise = _noise_from(config, seed)
    obs = observe(cfg, f0, sensors, noise)
    lspec = config.get("lambda", {})
    if lspec.get("mode", "adaptive") == "adaptive":
        trace, result = adapt_lambda(
            obs,
            cfg,
            tol_lambda=float(lspec.get("tol", 1e-3)),
            max_outer=int(lspec.get("max_outer", 25)),
            lambda0=lspec.get("initial"),
        )
        save_trace(trace, out / "trace.csv")
        lam = trace.final_lambda
    else:
        lam = float(lspec["value"])
        result = minimize(TikhonovProblem(cfg, obs, lam))
    n_times = int(espec.get("times", 26))
    ks = np.unique(np.linspace(0, cfg.steps, n_times).round().astype(int))
    times = ks * cfg.dt
    decay = interior_decay(
        result.f,
        f0,
        cfg,
        times,
        lam,
        sensors=sensors,
        fit_start_fraction=float(espec.get("fit_start_fraction", 0.2)),
    )
    write_csv(
        out / "decay.csv",
        "t,error_l2,error_n",
        [decay.times, decay.errors_l2, decay.errors_n],
    )
    rel = abs(decay.fit.slope / decay.predicted_slope - 1.0)
    passed = rel <= brackets["slope_rel_tol"]
    return {
        "kind": "interior-decay",
        "lambda": float(lam),
        "fitted_slope": decay.fit.slope,
        "predicted_slope": decay.predicted_slope,
        "relative_deviation": rel,
        "brackets": brackets,
        "passed": passed,
    }


def _experiment_spectral_check(config, cfg, grid, seed, jobs, out, brackets):
    espec = config["experiment"]
    K = int(espec.get("modes", 32))
    op = cfg.operator
    spectrum = partial_spectrum(op, K)
    save_spectrum(spectrum, cfg.T, out / "spectrum.csv")
    coeff = op.coeff
    analytic = analytic_spectrum(grid, coeff, cfg.T, K)
    mus_a = np.array([m for m, _ in analytic])
    ks = np.arange(1, K + 1)
    growth = 2.0 / grid.dim
    ratios_a = mus_a / ks**growth
    ratios = spectrum.eigenvalues / ks**growth
    tol = brackets["growth_ratio_tol"]
    lo, hi = ratios_a.min() * (1 - tol), ratios_a.max() * (1 + tol)
    growth_ok = bool(np.all((ratios >= lo) & (ratios <= hi)))
    T = cfg.T
    ts = np.linspace(0.0, T, 10)
    lams = np.logspace(-8, 0, 10)
    mus = spectrum.eigenvalues
    resolvent_ok = filter_ok = True
    for t in ts:
        for lam in lams:
            lhs1 = np.max(np.exp(-2 * t * mus) / (np.exp(-2 * T * mus) + lam) ** 2)
            if lhs1 > lam ** (-(2 - t / T)) * (1 + 1e-9):
                resolvent_ok = False
            lhs2 = np.max(
                np.exp(-2 * t * mus) * np.exp(-2 * T * mus) / (np.exp(-2 * T * mus) + lam) ** 2
            )
            if lhs2 > lam ** (t / T - 1.0) * (1 + 1e-9):
                filter_ok = False
    passed = growth_ok and resolvent_ok and filter_ok
    return {
        "kind": "spectral-check",
        "modes": K,
        "growth_ratio_within_bracket": growth_ok,
        "resolvent_bound_holds": resolvent_ok,
        "smoothing_bound_holds": filter_ok,
        "brackets": brackets,
        "passed": passed,
    }


def cmd_experiment(args):
    config, out, seed, jobs = _resolve(args)
    _require_sections(config, ["grid", "time", "experiment"])
    kind = args.kind or config["experiment"].get("kind")
    if kind not in _BRACKET_DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    config["experiment"]["kind"] = kind
    if kind != "spectral-check":
        _require_sections(config, ["initial", "sensors"])
    brackets = dict(_BRACKET_DEFAULTS[kind])
    brackets.update(config["experiment"].get("brackets", {}))
    grid, _, cfg = _build_forward(config)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "mc":
        summary = _experiment_mc(config, cfg, grid, seed, jobs, out, brackets)
    elif kind in ("sweep-sigma", "sweep-n", "sweep-fnorm"):
        summary = _experiment_sweep(config, cfg, grid, seed, jobs, out, brackets, kind)
    elif kind == "interior-decay":
        summary = _experiment_interior_decay(config, cfg, grid, seed, jobs, out, brackets)
    else:
        summary = _experiment_spectral_check(config, cfg, grid, seed, jobs, out, brackets)
    write_json(out / "summary.json", summary)
    _manifest(out, f"experiment:{kind}", config, seed, jobs)
    return 0 if summary["passed"] else 1


# --------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bhcp",
        description="Backward heat conduction: forward runs, inversion, experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("forward", cmd_forward),
        ("observe", cmd_observe),
        ("invert", cmd_invert),
        ("adapt-lambda", cmd_adapt_lambda),
        ("experiment", cmd_experiment),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker count (env BHCP_JOBS, then CPU count)")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="fixed regularization weight override")
        p.add_argument("--mode", choices=["fixed", "adaptive", "sweep"], default=None)
        if name == "experiment":
            p.add_argument("--kind", choices=sorted(_BRACKET_DEFAULTS), default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
