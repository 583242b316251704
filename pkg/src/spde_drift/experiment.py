"""Monte-Carlo harness: replicate pipelines, aggregation and normality diagnostics.

Every replicate is a pure function of (configuration, seed, replicate index),
so runs reproduce byte-for-byte regardless of worker count, doubling the
replicate count never changes earlier rows, and failed replicates are counted
and flagged instead of aborting the study.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.stats
from threadpoolctl import threadpool_limits

from . import asymptotics
from .contrast import ThinnedSpatialGrid
from .estimators import two_stage_estimate
from .exceptions import ConfigError, ContrastOptimizationError, EstimationWarning
from .likelihood import ThinnedTimeGrid
from .model import InitialCondition, ThetaParams, initial_coefficients, lambda_k, resolve_initial_coefficients
from .simulate import RngStream, SimGrid, observe_field, truncation_tail_scale

logger = logging.getLogger(__name__)

_FMT = "%.17g"

REPLICATE_HEADER = "rep,theta1_hat,theta2_hat,lambda1_hat,theta0_hat,z1,z2,z3,flags"

#: Standardized-vector column carrying each parameter's error.
_COMPONENTS = {"theta2": 0, "theta1": 1, "theta0": 2}


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one Monte-Carlo study (JSON round-trippable)."""

    theta_star: ThetaParams
    epsilon: float
    N: int
    M: int
    K: int
    N2: int
    m: int
    T: float
    delta: float
    xi: InitialCondition
    x1_0_override: float | None
    replicates: int
    seed: int
    output_dir: str

    def validate(self) -> None:
        if self.epsilon < 0.0 or self.epsilon > 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")
        for name in ("N", "M", "K", "N2", "m", "replicates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.N2 > self.N:
            raise ConfigError(f"N2={self.N2} cannot exceed N={self.N}")
        if not (self.T > 0.0):
            raise ConfigError("T must be positive")
        if not (0.0 < self.delta < 0.5):
            raise ConfigError("delta must lie in (0, 1/2)")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            ThinnedSpatialGrid(delta=self.delta, m=self.m, M=self.M)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        if self.xi.kind == "parabola":
            xi = {"kind": "parabola", "c": self.xi.coefficient}
        else:
            xi = {"kind": self.xi.kind, "values": self.xi.values.tolist()}
        return {
            "theta_star": list(self.theta_star.as_array()),
            "epsilon": self.epsilon,
            "N": self.N,
            "M": self.M,
            "K": self.K,
            "N2": self.N2,
            "m": self.m,
            "T": self.T,
            "delta": self.delta,
            "xi": xi,
            "x1_0_override": self.x1_0_override,
            "replicates": self.replicates,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {
            "theta_star",
            "epsilon",
            "N",
            "M",
            "K",
            "N2",
            "m",
            "T",
            "delta",
            "xi",
            "x1_0_override",
            "replicates",
            "seed",
            "output_dir",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = known - set(raw) - {"K", "x1_0_override", "output_dir"}
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        try:
            theta = ThetaParams(*(float(v) for v in raw["theta_star"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid theta_star: {exc}") from exc
        try:
            xi = _xi_from_dict(raw["xi"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid xi: {exc}") from exc
        try:
            config = cls(
                theta_star=theta,
                epsilon=float(raw["epsilon"]),
                N=_as_int(raw["N"], "N"),
                M=_as_int(raw["M"], "M"),
                K=_as_int(raw["K"], "K") if raw.get("K") is not None else 10 * _as_int(raw["M"], "M"),
                N2=_as_int(raw["N2"], "N2"),
                m=_as_int(raw["m"], "m"),
                T=float(raw["T"]),
                delta=float(raw["delta"]),
                xi=xi,
                x1_0_override=(
                    float(raw["x1_0_override"]) if raw.get("x1_0_override") is not None else None
                ),
                replicates=_as_int(raw["replicates"], "replicates"),
                seed=_as_int(raw["seed"], "seed"),
                output_dir=str(raw.get("output_dir", "results")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc
        config.validate()
        return config

    def sim_grid(self) -> SimGrid:
        return SimGrid(N=self.N, M=self.M, T=self.T, K=self.K)

    def spatial_grid(self) -> ThinnedSpatialGrid:
        return ThinnedSpatialGrid(delta=self.delta, m=self.m, M=self.M)

    def time_grid(self) -> ThinnedTimeGrid:
        return ThinnedTimeGrid(N2=self.N2, N=self.N, T=self.T)

    def x1_0(self) -> float:
        """First-mode initial coordinate feeding the information constant."""
        if self.x1_0_override is not None:
            return self.x1_0_override
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return float(initial_coefficients(self.xi, self.theta_star.eta, 1)[0])


def _as_int(value, name: str) -> int:
    """Strict integer cast: 2.7 must not silently become 2."""
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(value)


def _xi_from_dict(raw: dict) -> InitialCondition:
    kind = raw["kind"]
    if kind == "parabola":
        return InitialCondition.parabola(raw["c"])
    if kind == "tabulated":
        return InitialCondition.tabulated(raw["values"])
    if kind == "coefficients":
        return InitialCondition.from_coefficients(raw["values"])
    raise ValueError(f"unknown xi kind {kind!r}")


def rate_condition_diagnostics(config: ExperimentConfig) -> dict:
    """Limit-theory design ratios, reported without pass/fail semantics.

    The M exponent is reported at rho1 = 1/2, the midpoint of its admissible
    range.
    """
    eps2 = config.epsilon**2
    return {
        "m_over_sqrt_N": config.m / math.sqrt(config.N),
        "N2_over_eps2_N_m": (config.N2 / (eps2 * config.N * config.m)) if eps2 > 0 else math.inf,
        "N2_over_sqrt_M": config.N2 / math.sqrt(config.M),
        "N_m_over_M_sq": config.N * config.m / config.M**2,
        "epsilon_sqrt_N2": config.epsilon * math.sqrt(config.N2),
    }


@dataclass(frozen=True)
class ReplicateResult:
    """Estimates plus standardized errors for one replicate (NaN when failed)."""

    rep_index: int
    theta1_hat: float
    theta2_hat: float
    lambda1_hat: float
    theta0_hat: float
    z: tuple[float, float, float]
    contrast_value: float
    loglik_value: float
    flags: tuple[str, ...]
    failed: bool
    message: str
    wall_time: float


def _sanitize(text: str) -> str:
    return text.replace(",", ";").replace("\n", " ")


def run_replicate(config: ExperimentConfig, rep_index: int) -> ReplicateResult:
    """Simulate, estimate and standardize one replicate.

    Deterministic given (config, seed, rep_index).  Estimation failures
    (including epsilon = 0, which the model requires to be positive for
    estimation) come back flagged rather than raised.
    """
    start = time.perf_counter()
    nan = float("nan")
    estimates = (nan, nan, nan, nan)
    z = (nan, nan, nan)
    contrast_value = nan
    loglik_value = nan
    failed = False
    message = ""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            with threadpool_limits(limits=1):
                theta = config.theta_star
                x0 = resolve_initial_coefficients(
                    config.xi, theta.eta, config.K, config.x1_0_override
                )
                spatial = config.spatial_grid()
                temporal = config.time_grid()
                obs = observe_field(
                    theta,
                    config.epsilon,
                    config.sim_grid(),
                    config.xi,
                    RngStream(seed=config.seed, replicate=rep_index),
                    spatial.sites,
                    temporal.row_steps(),
                    x0=x0,
                )
                est = two_stage_estimate(obs, config.epsilon, spatial, temporal)
                estimates = (est.theta1_hat, est.theta2_hat, est.lambda1_hat, est.theta0_hat)
                contrast_value = est.contrast_value
                loglik_value = est.loglik_value
                z = tuple(
                    asymptotics.standardize(est, theta, config.N, config.m, config.epsilon)
                )
        except (ValueError, ContrastOptimizationError, np.linalg.LinAlgError) as exc:
            failed = True
            message = str(exc)
    flags = tuple(
        _sanitize(f"{w.category.__name__}: {w.message}")
        for w in caught
        if issubclass(w.category, EstimationWarning)
    )
    if failed:
        flags = flags + (_sanitize(f"failed: {message}"),)
    return ReplicateResult(
        rep_index=rep_index,
        theta1_hat=estimates[0],
        theta2_hat=estimates[1],
        lambda1_hat=estimates[2],
        theta0_hat=estimates[3],
        z=z,
        contrast_value=contrast_value,
        loglik_value=loglik_value,
        flags=flags,
        failed=failed,
        message=message,
        wall_time=time.perf_counter() - start,
    )


def _replicate_task(item: tuple[ExperimentConfig, int]) -> ReplicateResult:
    config, rep_index = item
    return run_replicate(config, rep_index)


@dataclass(frozen=True)
class NormalityDiagnostics:
    """Plot-ready tables comparing standardized samples to N(0, variance)."""

    ecdf: np.ndarray  # (n, 3): value, empirical cdf, normal cdf
    qq: np.ndarray  # (n, 2): normal quantile, sample quantile
    hist: np.ndarray  # (30, 5): left, right, count, density, normal density
    ks: float
    degenerate: bool


def normality_diagnostics(samples, variance: float, bins: int = 30) -> NormalityDiagnostics:
    """ECDF, Q-Q pairs, histogram and two-sided KS against N(0, variance).

    Q-Q pairs use the (i - 0.5)/n normal quantiles; the histogram covers
    sample mean +/- 4 standard deviations of the target law with a fixed bin
    count, so output artifacts are deterministic.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not (variance > 0.0) or not np.isfinite(variance):
        raise ValueError(f"variance must be positive and finite, got {variance!r}")
    n = x.size
    sigma = math.sqrt(variance)
    cdf = scipy.stats.norm.cdf(x, scale=sigma)
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    ks = float(np.max(np.maximum(upper - cdf, cdf - lower)))

    ecdf = np.column_stack([x, upper, cdf])
    probs = (np.arange(1, n + 1) - 0.5) / n
    qq = np.column_stack([sigma * scipy.stats.norm.ppf(probs), x])

    center = float(np.mean(x))
    lo, hi = center - 4.0 * sigma, center + 4.0 * sigma
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    mids = 0.5 * (edges[:-1] + edges[1:])
    hist = np.column_stack(
        [
            edges[:-1],
            edges[1:],
            counts.astype(float),
            counts / (n * width),
            scipy.stats.norm.pdf(mids, scale=sigma),
        ]
    )
    degenerate = bool(np.all(x == x[0]))
    return NormalityDiagnostics(ecdf=ecdf, qq=qq, hist=hist, ks=ks, degenerate=degenerate)


@dataclass(frozen=True)
class SummaryStats:
    """Aggregated study results (the content of summary.json)."""

    replicates: int
    failures: int
    mean: dict
    sd: dict
    ks: dict
    target_variance: dict
    rate_conditions: dict
    lambda1_star: float
    gamma: float
    truncation_tail: float
    notes: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "replicates": self.replicates,
            "failures": self.failures,
            "mean": self.mean,
            "sd": self.sd,
            "ks": self.ks,
            "target_variance": self.target_variance,
            "rate_conditions": self.rate_conditions,
            "lambda1_star": self.lambda1_star,
            "gamma": self.gamma,
            "truncation_tail": self.truncation_tail,
            "notes": list(self.notes),
        }


def _write_table(path: Path, header: str, rows: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(_FMT % v for v in row) + "\n")


def write_replicates_csv(path: Path, results: list[ReplicateResult]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(REPLICATE_HEADER + "\n")
        for r in results:
            fields = [
                str(r.rep_index),
                *(_FMT % v for v in (r.theta1_hat, r.theta2_hat, r.lambda1_hat, r.theta0_hat)),
                *(_FMT % v for v in r.z),
                ";".join(r.flags),
            ]
            fh.write(",".join(fields) + "\n")


def run_experiment(
    config: ExperimentConfig,
    threads: int | None = None,
    output_dir=None,
) -> SummaryStats:
    """Run all replicates, write every output artifact, return the summary.

    Output files: ``effective_config.json``, ``replicates.csv``,
    ``summary.json`` and per-parameter ``ecdf_*.csv``, ``qq_*.csv``,
    ``hist_*.csv``.  Identical (config, seed) produce byte-identical files
    for any worker count.
    """
    config.validate()
    out = Path(output_dir) if output_dir is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "effective_config.json", "w", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    n_workers = threads if threads is not None else (os.cpu_count() or 1)
    n_workers = max(1, min(n_workers, config.replicates))
    items = [(config, rep) for rep in range(config.replicates)]
    started = time.perf_counter()
    if n_workers == 1:
        results = [_replicate_task(item) for item in items]
    else:
        # fork keeps worker startup cheap and works from non-importable
        # __main__ contexts (stdin scripts); workers cap BLAS threads at 1,
        # so inherited thread pools are not exercised concurrently
        methods = multiprocessing.get_all_start_methods()
        context = multiprocessing.get_context("fork" if "fork" in methods else "spawn")
        with ProcessPoolExecutor(max_workers=n_workers, mp_context=context) as pool:
            results = list(pool.map(_replicate_task, items, chunksize=1))
    results.sort(key=lambda r: r.rep_index)
    logger.info(
        "ran %d replicates on %d workers in %.1f s",
        config.replicates,
        n_workers,
        time.perf_counter() - started,
    )
    write_replicates_csv(out / "replicates.csv", results)

    ok = [r for r in results if not r.failed]
    failures = len(results) - len(ok)
    notes: list[str] = []
    names = ("theta1_hat", "theta2_hat", "lambda1_hat", "theta0_hat")
    mean: dict = {}
    sd: dict = {}
    if ok:
        table = np.array(
            [[r.theta1_hat, r.theta2_hat, r.lambda1_hat, r.theta0_hat] for r in ok]
        )
        for j, name in enumerate(names):
            mean[name] = float(np.mean(table[:, j]))
            if len(ok) > 1:
                sd[name] = float(np.std(table[:, j], ddof=1))
            else:
                sd[name] = 0.0
        if len(ok) == 1:
            notes.append("sd undefined for a single successful replicate; reported as 0")
    else:
        notes.append("no successful replicates")
        for name in names:
            mean[name] = float("nan")
            sd[name] = float("nan")

    # limit-law targets
    lambda1_star = float(lambda_k(config.theta_star, 1))
    cov = asymptotics.covariance_matrices(config.theta_star, config.delta)
    target = {
        "theta2": float(cov.j_mat[0, 0]),
        "theta1": float(cov.j_mat[1, 1]),
        "theta0": float("nan"),
    }
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if lambda1_star > 0.0:
            g = asymptotics.g_fisher(lambda1_star, config.x1_0(), horizon=config.T)
            if g > 0.0:
                target["theta0"] = 1.0 / g
    notes.extend(
        _sanitize(f"{w.category.__name__}: {w.message}")
        for w in caught
        if issubclass(w.category, EstimationWarning)
    )

    ks: dict = {}
    z_matrix = np.array([r.z for r in ok]) if ok else np.empty((0, 3))
    for name, column in _COMPONENTS.items():
        variance = target[name]
        if len(ok) >= 2 and np.isfinite(variance) and variance > 0.0:
            diag = normality_diagnostics(z_matrix[:, column], variance)
            ks[name] = diag.ks
            if diag.degenerate:
                notes.append(f"standardized {name} samples are degenerate")
            _write_table(out / f"ecdf_{name}.csv", "value,empirical_cdf,normal_cdf", diag.ecdf)
            _write_table(out / f"qq_{name}.csv", "normal_quantile,sample_quantile", diag.qq)
            _write_table(
                out / f"hist_{name}.csv",
                "bin_left,bin_right,count,density,normal_density",
                diag.hist,
            )
        else:
            ks[name] = float("nan")

    summary = SummaryStats(
        replicates=config.replicates,
        failures=failures,
        mean=mean,
        sd=sd,
        ks=ks,
        target_variance=target,
        rate_conditions=rate_condition_diagnostics(config),
        lambda1_star=lambda1_star,
        gamma=float(cov.gamma),
        truncation_tail=truncation_tail_scale(config.theta_star, config.epsilon, config.sim_grid()),
        notes=tuple(notes),
    )
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return summary
