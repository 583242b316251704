"""Command-line interface: simulate, estimate, experiment, asymptotics.

All subcommands read the same JSON configuration (schema below), apply
``--set key=value`` overrides in order (last wins, each logged), and write the
effective configuration beside their outputs so any run can be reproduced
from its artifacts alone.

Exit codes: 0 success, 2 configuration error, 3 estimation failure in
single-shot mode, 4 I/O error.  Failures print one machine-readable JSON line
on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import asymptotics
from .contrast import profile_curve, realized_variations
from .estimators import two_stage_estimate
from .exceptions import ConfigError, ContrastOptimizationError
from .experiment import ExperimentConfig, rate_condition_diagnostics, run_experiment
from .likelihood import approx_coordinate_series, profile_loglik
from .model import resolve_initial_coefficients
from .simulate import RngStream, dump_observations, load_observations, observe_field

logger = logging.getLogger("spde_drift")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4

_FMT = "%.17g"

CONFIG_KEYS_HELP = """\
configuration keys (JSON object, snake_case):
  theta_star      [theta0, theta1, theta2]; theta2 > 0
  epsilon         known dispersion level in [0, 1] (0 simulates but cannot estimate)
  N, M            time steps / space steps of the observation grid
  K               spectral truncation (default 10*M)
  N2, m           thinned time count / thinned site count
  T               time horizon (> 0)
  delta           boundary cutoff in (0, 1/2) for the thinned sites
  xi              {"kind": "parabola", "c": ...} |
                  {"kind": "tabulated", "values": [...]} |
                  {"kind": "coefficients", "values": [...]}
  x1_0_override   explicit first-mode initial coordinate (optional; wins over
                  the projection of xi and feeds the information constant)
  replicates      Monte-Carlo replicate count (>= 1)
  seed            64-bit RNG seed
  output_dir      default output directory (overridden by --output-dir)
"""


@dataclass
class CliInvocation:
    """Parsed command line, ready for dispatch."""

    subcommand: str
    config_path: str
    overrides: list[str]
    output_dir: str | None
    threads: int | None
    verbosity: int
    observations: str | None = None


def _fail_line(code: int, kind: str, message: str) -> None:
    print("error: " + json.dumps({"code": code, "kind": kind, "message": message}), file=sys.stderr)


def parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings (e.g. output paths) stay strings
    return key, value


def load_config(invocation: CliInvocation) -> ExperimentConfig:
    path = Path(invocation.config_path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    for text_item in invocation.overrides:
        key, value = parse_override(text_item)
        logger.info("override %s=%r (from --set)", key, value)
        raw[key] = value
    return ExperimentConfig.from_dict(raw)


def _resolve_output(config: ExperimentConfig, invocation: CliInvocation) -> Path:
    out = Path(invocation.output_dir) if invocation.output_dir else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective_config(config: ExperimentConfig, out: Path) -> None:
    with open(out / "effective_config.json", "w", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _simulate_observations(config: ExperimentConfig, replicate: int = 0):
    theta = config.theta_star
    x0 = resolve_initial_coefficients(config.xi, theta.eta, config.K, config.x1_0_override)
    return observe_field(
        theta,
        config.epsilon,
        config.sim_grid(),
        config.xi,
        RngStream(seed=config.seed, replicate=replicate),
        config.spatial_grid().sites,
        config.time_grid().row_steps(),
        x0=x0,
    )


def cmd_simulate(config: ExperimentConfig, invocation: CliInvocation) -> int:
    out = _resolve_output(config, invocation)
    obs = _simulate_observations(config)
    dump_observations(obs, out)
    _write_effective_config(config, out)
    logger.info("wrote observation slices to %s", out)
    return EXIT_OK


def cmd_estimate(config: ExperimentConfig, invocation: CliInvocation) -> int:
    out = _resolve_output(config, invocation)
    if invocation.observations:
        obs = load_observations(Path(invocation.observations))
        if obs.grid.N != config.N or obs.grid.M != config.M or obs.grid.T != config.T:
            raise ConfigError(
                "loaded observations disagree with the configuration "
                f"(N={obs.grid.N}, M={obs.grid.M}, T={obs.grid.T})"
            )
    else:
        obs = _simulate_observations(config)
    spatial = config.spatial_grid()
    temporal = config.time_grid()
    est = two_stage_estimate(obs, config.epsilon, spatial, temporal)

    z = asymptotics.standardize(est, config.theta_star, config.N, config.m, config.epsilon)
    payload = {
        "theta1_hat": est.theta1_hat,
        "theta2_hat": est.theta2_hat,
        "lambda1_hat": est.lambda1_hat,
        "theta0_hat": est.theta0_hat,
        "sigma0_sq_hat": est.sigma0_sq_hat,
        "eta_hat": est.eta_hat,
        "contrast_value": est.contrast_value,
        "loglik_value": est.loglik_value,
        "standardized": z.tolist(),
    }
    with open(out / "estimate.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # plot-ready dumps: fitted site profile, coordinate series, rate profile
    zvar = realized_variations(obs.site_columns, config.T) / config.epsilon**2
    fitted = profile_curve(est.sigma0_sq_hat, est.eta_hat, spatial.sites)
    _write_rows(out / "contrast_fit.csv", "site,rescaled_variation,fitted_curve",
                np.column_stack([spatial.sites, zvar, fitted]))
    series = approx_coordinate_series(obs.time_rows, est.eta_hat, config.M, k=1)
    _write_rows(out / "coordinate_series.csv", "s,x1_hat",
                np.column_stack([temporal.times(), series.values]))
    lams, values = profile_loglik(series, config.epsilon, temporal)
    _write_rows(out / "loglik_profile.csv", "lambda,loglik", np.column_stack([lams, values]))
    _write_effective_config(config, out)
    logger.info("wrote estimate and profile dumps to %s", out)
    return EXIT_OK


def _write_rows(path: Path, header: str, rows: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(_FMT % v for v in row) + "\n")


def cmd_experiment(config: ExperimentConfig, invocation: CliInvocation) -> int:
    out = _resolve_output(config, invocation)
    summary = run_experiment(config, threads=invocation.threads, output_dir=out)
    logger.info(
        "experiment finished: %d replicates, %d failures", summary.replicates, summary.failures
    )
    return EXIT_OK


def cmd_asymptotics(config: ExperimentConfig, invocation: CliInvocation) -> int:
    out = _resolve_output(config, invocation)
    payload = asymptotics.report(
        config.theta_star, config.delta, config.x1_0(), horizon=config.T
    )
    payload["rate_conditions"] = rate_condition_diagnostics(config)
    with open(out / "asymptotics.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_effective_config(config, out)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "asymptotics": cmd_asymptotics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spde-drift",
        description="Simulate and estimate the drift of a small-dispersion parabolic SPDE.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=CONFIG_KEYS_HELP,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    descriptions = {
        "simulate": "simulate one replicate and dump the observation slices as CSV",
        "estimate": "single-shot estimation (from dumped slices or simulated inline)",
        "experiment": "run the Monte-Carlo study and write summary artifacts",
        "asymptotics": "report every limit-law constant for the configured parameters",
    }
    for name, help_text in descriptions.items():
        p = sub.add_parser(
            name,
            help=help_text,
            description=help_text,
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog=CONFIG_KEYS_HELP,
        )
        p.add_argument("-c", "--config", required=True, help="path to the JSON configuration")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (JSON-typed value; repeatable, last wins)",
        )
        p.add_argument("-o", "--output-dir", default=None, help="output directory (default: config output_dir)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
        if name == "experiment":
            p.add_argument(
                "--threads",
                type=int,
                default=None,
                help="worker pool size (default: available CPUs); results do not depend on it",
            )
        if name == "estimate":
            p.add_argument(
                "--observations",
                default=None,
                help="directory with dumped observation slices (default: simulate inline)",
            )
    return parser


def dispatch(invocation: CliInvocation) -> int:
    """Run one parsed invocation; map failures to documented exit codes."""
    level = logging.WARNING - 10 * min(invocation.verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(invocation)
    except ConfigError as exc:
        _fail_line(EXIT_CONFIG, "config", str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _fail_line(EXIT_IO, "io", str(exc))
        return EXIT_IO
    try:
        return _COMMANDS[invocation.subcommand](config, invocation)
    except ConfigError as exc:
        _fail_line(EXIT_CONFIG, "config", str(exc))
        return EXIT_CONFIG
    except (ContrastOptimizationError, np.linalg.LinAlgError) as exc:
        _fail_line(EXIT_ESTIMATION, "estimation", str(exc))
        return EXIT_ESTIMATION
    except ValueError as exc:
        if invocation.subcommand == "estimate":
            _fail_line(EXIT_ESTIMATION, "estimation", str(exc))
            return EXIT_ESTIMATION
        _fail_line(EXIT_CONFIG, "config", str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _fail_line(EXIT_IO, "io", str(exc))
        return EXIT_IO


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    invocation = CliInvocation(
        subcommand=args.subcommand,
        config_path=args.config,
        overrides=args.overrides,
        output_dir=args.output_dir,
        threads=getattr(args, "threads", None),
        verbosity=args.verbose,
        observations=getattr(args, "observations", None),
    )
    return dispatch(invocation)


if __name__ == "__main__":
    sys.exit(main())
