"""Command-line front end: resolve a run configuration, simulate, write results.

Config files are flat TOML. Angles and angle standard deviations are given
in degrees, SNR in dB; everything is converted to radians before it reaches
the library. Example::

    snr_db = 20
    trials = 1000
    init = "imperfect"
    algorithms = ["lms", "bilms", "ekf"]
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .experiments import (
    ALGORITHMS,
    SWEEP_PARAMETERS,
    TERMINAL_INITS,
    ExperimentConfig,
    InitScheme,
    MseTrace,
    run_experiment,
    sweep,
)
from .model import ArrayConfig, DynamicsParams
from .trackers import StepSizes

OUT_ENV = "MMWAVE_TRACK_OUT"
CSV_HEADER = ("step", "algorithm", "param_group", "mse", "stderr", "diverged_count")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# key -> (type, default, help). Defaults are the paper's simulation setup.
SETTINGS = {
    "M": (int, 16, "receive antennas"),
    "N": (int, 16, "transmit antennas"),
    "spacing_ratio": (float, 0.5, "antenna spacing over wavelength"),
    "theta_point_deg": (float, 45.0, "combiner pointing angle (deg)"),
    "phi_point_deg": (float, 45.0, "precoder pointing angle (deg)"),
    "paths": (int, 1, "number of multipath components L"),
    "rho": (float, 0.995, "AR(1) gain correlation"),
    "sigma_theta_deg": (float, 0.5, "AoA random-walk std per step (deg)"),
    "sigma_phi_deg": (float, 0.5, "AoD random-walk std per step (deg)"),
    "mu_alpha": (float, 0.1, "LMS step size for gains"),
    "mu_theta": (float, 1e-4, "LMS step size for AoA"),
    "mu_phi": (float, 1e-4, "LMS step size for AoD"),
    "snr_db": (float, 30.0, "SNR = M*N/N0 in dB"),
    "horizon": (int, 100, "time steps per trial"),
    "trials": (int, 500, "Monte-Carlo trials"),
    "init": (str, "perfect", "initialization: perfect or imperfect"),
    "sigma_eps_alpha": (float, 0.5, "imperfect-init std per gain component"),
    "sigma_eps_angle_deg": (float, 0.5, "imperfect-init angle std (deg)"),
    "algorithms": (list, list(ALGORITHMS), "subset of " + ", ".join(ALGORITHMS)),
    "terminal_init": (str, "scheme", "BiLMS window-end init: " + ", ".join(TERMINAL_INITS)),
    "perfect_init_var": (float, 1e-6, "EKF initial covariance scale under perfect init"),
    "seed": (int, 0, "base random seed"),
    "sweep_parameter": (str, "", "optional sweep: " + ", ".join(SWEEP_PARAMETERS)),
    "sweep_values": (list, [], "values for the sweep parameter"),
}


def _coerce(key, value):
    kind = SETTINGS[key][0]
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise ValueError
            return value
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ValueError
        if key == "algorithms":
            return [str(v) for v in value]
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(key, f"malformed value {value!r}, expected {kind.__name__}") from None


def resolve_settings(path=None, overrides=None) -> dict:
    """Merge defaults, an optional TOML file and overrides into a flat dict."""
    settings = {key: spec[1] for key, spec in SETTINGS.items()}
    sources = []
    if path is not None:
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from None
        # A manifest nests the settings under [config].
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        sources.append(data)
    if overrides:
        sources.append({k: v for k, v in overrides.items() if v is not None})
    for source in sources:
        for key, value in source.items():
            if key not in SETTINGS:
                raise ConfigError(key, "unknown key")
            settings[key] = _coerce(key, value)
    to_experiment(settings)
    if settings["sweep_parameter"]:
        if settings["sweep_parameter"] not in SWEEP_PARAMETERS:
            raise ConfigError("sweep_parameter", f"must be one of {SWEEP_PARAMETERS}")
        if not settings["sweep_values"]:
            raise ConfigError("sweep_values", "a sweep needs at least one value")
    return settings


def to_experiment(settings: dict) -> ExperimentConfig:
    """Build the radian-valued experiment config; errors name the offending key."""
    def build(key, fn):
        try:
            return fn()
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from None

    s = settings
    for key in ("M", "N"):
        if s[key] < 1:
            raise ConfigError(key, f"must be a positive integer, got {s[key]!r}")
    if not s["spacing_ratio"] > 0:
        raise ConfigError("spacing_ratio", f"must be positive, got {s['spacing_ratio']!r}")
    for key in ("theta_point_deg", "phi_point_deg"):
        if not 0.0 < s[key] < 180.0:
            raise ConfigError(key, f"must lie in (0, 180) degrees, got {s[key]!r}")
    array = ArrayConfig(s["M"], s["N"], s["spacing_ratio"],
                        np.deg2rad(s["theta_point_deg"]), np.deg2rad(s["phi_point_deg"]))
    for key in ("sigma_theta_deg", "sigma_phi_deg", "sigma_eps_alpha", "sigma_eps_angle_deg"):
        if s[key] < 0:
            raise ConfigError(key, f"must be non-negative, got {s[key]!r}")
    dyn = build("rho", lambda: DynamicsParams(
        s["rho"], np.deg2rad(s["sigma_theta_deg"]) ** 2, np.deg2rad(s["sigma_phi_deg"]) ** 2))
    for key in ("mu_alpha", "mu_theta", "mu_phi"):
        if not s[key] > 0:
            raise ConfigError(key, f"must be positive, got {s[key]!r}")
    steps = StepSizes(s["mu_alpha"], s["mu_theta"], s["mu_phi"])
    init = build("init", lambda: InitScheme(
        s["init"], s["sigma_eps_alpha"] ** 2, np.deg2rad(s["sigma_eps_angle_deg"]) ** 2))
    for key in ("horizon", "trials", "paths"):
        if s[key] < 1:
            raise ConfigError(key, f"must be a positive integer, got {s[key]!r}")
    bad = [a for a in s["algorithms"] if a not in ALGORITHMS]
    if bad or not s["algorithms"] or len(set(s["algorithms"])) != len(s["algorithms"]):
        raise ConfigError("algorithms", f"expected distinct entries from {ALGORITHMS}, got {s['algorithms']!r}")
    if s["terminal_init"] not in TERMINAL_INITS:
        raise ConfigError("terminal_init", f"must be one of {TERMINAL_INITS}")
    if s["seed"] < 0:
        raise ConfigError("seed", "must be non-negative")
    return build("config", lambda: ExperimentConfig(
        array=array, dynamics=dyn, steps=steps, snr_db=s["snr_db"], horizon=s["horizon"],
        trials=s["trials"], init=init, algorithms=tuple(s["algorithms"]), seed=s["seed"],
        paths=s["paths"], terminal_init=s["terminal_init"], perfect_init_var=s["perfect_init_var"]))


def parse_config(path=None, overrides=None) -> ExperimentConfig:
    return to_experiment(resolve_settings(path, overrides))


def dump_settings(settings: dict) -> str:
    return tomli_w.dumps({"config": settings})


def write_trace_csv(trace: MseTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for step, alg, group, mse, se, div in trace.records():
            writer.writerow((step, alg, group, repr(mse), repr(se), div))


def _value_tag(value) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value).replace(".", "p").replace("-", "m")


def run_and_write(settings: dict, out_dir, plot: bool = False) -> int:
    """Run the configured experiment (or sweep) and write CSV + manifest."""
    from . import plotting

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {out} is not writable: {exc}", file=sys.stderr)
        return 3

    cfg = to_experiment(settings)
    start = time.perf_counter()
    param = settings["sweep_parameter"]
    try:
        if param:
            values = settings["sweep_values"]
            traces = sweep(cfg, param, values)
            with open(out / "sweep_index.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow((param, "file"))
                for value, trace in zip(values, traces):
                    name = f"mse_{param}_{_value_tag(value)}.csv"
                    write_trace_csv(trace, out / name)
                    writer.writerow((repr(float(value)), name))
            if plot:
                plotting.plot_sweep(values, traces, param, out / f"sweep_{param}.png")
                for value, trace in zip(values, traces):
                    plotting.plot_trace(trace, out / f"mse_{param}_{_value_tag(value)}_aoa.png",
                                        title=f"{param} = {value:g}")
        else:
            trace = run_experiment(cfg)
            write_trace_csv(trace, out / "mse.csv")
            if plot:
                for group in ("aoa", "aod", "gain"):
                    plotting.plot_trace(trace, out / f"mse_{group}.png", group=group)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: experiment failed: {exc}", file=sys.stderr)
        return 4
    manifest = {
        "tool": "mmwave-track",
        "version": __version__,
        "seed": settings["seed"],
        "duration_s": time.perf_counter() - start,
        "config": settings,
    }
    (out / "manifest.toml").write_text(tomli_w.dumps(manifest))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmwave-track", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML config or a previous manifest.toml")
        group = p.add_argument_group("overrides")
        for key, (kind, default, text) in SETTINGS.items():
            flag = "--" + key.replace("_", "-")
            if kind is list:
                group.add_argument(flag, dest=key, nargs="+", metavar="V", help=text)
            else:
                group.add_argument(flag, dest=key, type=str if kind is str else kind,
                                   help=f"{text} (default {default!r})")

    run = sub.add_parser("run", help="run an experiment or sweep and write results")
    common(run)
    run.add_argument("--out", type=Path, default=None,
                     help=f"output directory (default ${OUT_ENV} or ./results)")
    run.add_argument("--plot", action="store_true", help="also render PNG figures")

    show = sub.add_parser("config", help="print the resolved configuration as TOML")
    common(show)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {key: getattr(args, key) for key in SETTINGS}
    try:
        settings = resolve_settings(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "config":
        sys.stdout.write(dump_settings(settings))
        return 0
    out = args.out or Path(os.environ.get(OUT_ENV, "results"))
    return run_and_write(settings, out, plot=args.plot)


if __name__ == "__main__":
    sys.exit(main())
