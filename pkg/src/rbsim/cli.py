"""Command-line front end: config parsing, study dispatch, CSV/fit output.

Subcommands: check-model, simulate, strong-order, longtime, chaos, stability,
perf.  Configuration comes from a TOML file (sections [model], [grid],
[study], [run]) overridden by repeatable ``--set section.key=value`` flags and
the explicit ``--seed/--out-dir/--threads/--allow-unstable-tau`` flags.

Exit codes: 0 success, 1 configuration error, 2 embedded study check failed,
3 divergence outside the stability study.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from dataclasses import asdict

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import ConfigurationError, DivergenceError, RbsimError
from .experiments import (
    ChaosConfig,
    LongtimeConfig,
    ModelSpec,
    PerfConfig,
    StabilityConfig,
    StrongOrderConfig,
    StudyResult,
    run_chaos_study,
    run_longtime_study,
    run_perf_benchmark,
    run_stability_study,
    run_strong_order_study,
)
from .model import check_assumptions
from .rng import derive_seed, make_noise_plan, make_partition_plan
from .runio import fingerprint_of, write_csv, write_fits_json, write_manifest
from .sim import InitialLaw, simulate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSERTION = 2
EXIT_DIVERGENCE = 3


@dataclasses.dataclass
class RunManifest:
    """Provenance record written before a study starts and finalized after."""

    command: str
    config: dict
    seed: int
    fingerprint: str
    out_dir: str
    started_at: str
    version: str = __version__
    outputs: list = dataclasses.field(default_factory=list)
    warnings: list = dataclasses.field(default_factory=list)
    wall_clock_seconds: float | None = None
    assertions_passed: bool | None = None

    def write(self, path: str) -> None:
        write_manifest(path, dataclasses.asdict(self))


@dataclasses.dataclass(frozen=True)
class SimulateConfig:
    """Config for the plain snapshot-export run."""

    model: ModelSpec = ModelSpec()
    process: str = "discrete_rbips"
    n_particles: int = 16
    batch_size: int = 2
    tau: float = 2**-5
    n_steps: int = 256
    snapshot_every: int = 8
    replicas: int = 2
    initial_law: str = "dirac"
    initial_scale: float = 1.0
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = False


@dataclasses.dataclass(frozen=True)
class CheckModelConfig:
    model: ModelSpec = ModelSpec(family="ou", alpha=1.0, eps=0.0)
    grid_radius: float = 10.0
    grid_points: int = 64
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = False


# Dotted config key -> dataclass attribute, per subcommand.  Model and run
# sections are shared.
_MODEL_KEYS = {
    "model.family": "family",
    "model.alpha": "alpha",
    "model.eps": "eps",
    "model.sigma": "sigma",
    "model.dim": "dim",
}
_RUN_KEYS = {
    "run.seed": "seed",
    "run.threads": "threads",
    "run.allow_unstable_tau": "allow_unstable_tau",
}

_SCHEMAS: dict[str, tuple[type, dict[str, str]]] = {
    "strong-order": (
        StrongOrderConfig,
        {
            "grid.tau": "taus",
            "grid.p": "batch_sizes",
            "study.n_particles": "n_particles",
            "study.horizon": "horizon",
            "study.replicas": "replicas",
            "study.refine_levels": "refine_levels",
            "study.initial_law": "initial_law",
            "study.initial_scale": "initial_scale",
            "study.slope_window": "slope_window",
            "study.min_r_squared": "min_r_squared",
        },
    ),
    "longtime": (
        LongtimeConfig,
        {
            "grid.tau": "taus",
            "grid.n": "n_grid",
            "study.batch_size": "batch_size",
            "study.horizon": "horizon",
            "study.pool_target": "pool_target",
            "study.pool_min": "pool_min",
            "study.curve_points": "curve_points",
            "study.dense_dt": "dense_dt",
            "study.dense_until_t": "dense_until_t",
            "study.tail_start_frac": "tail_start_frac",
            "study.initial_law": "initial_law",
            "study.initial_scale": "initial_scale",
            "study.oracle_n_ref": "oracle_n_ref",
            "study.oracle_tau_fine": "oracle_tau_fine",
            "study.oracle_horizon": "oracle_horizon",
            "study.oracle_tail_snaps": "oracle_tail_snaps",
            "study.lambda_spread_max": "lambda_spread_max",
            "study.plateau_slope_min": "plateau_slope_min",
            "study.min_r_squared": "min_r_squared",
        },
    ),
    "chaos": (
        ChaosConfig,
        {
            "grid.n": "n_grid",
            "study.tau": "tau",
            "study.batch_size": "batch_size",
            "study.horizon": "horizon",
            "study.replicas": "replicas",
            "study.initial_law": "initial_law",
            "study.initial_scale": "initial_scale",
            "study.oracle_n_ref": "oracle_n_ref",
            "study.oracle_tau_fine": "oracle_tau_fine",
            "study.oracle_horizon": "oracle_horizon",
            "study.oracle_tail_snaps": "oracle_tail_snaps",
            "study.slope_window": "slope_window",
        },
    ),
    "stability": (
        StabilityConfig,
        {
            "grid.tau": "taus",
            "study.n_particles": "n_particles",
            "study.batch_size": "batch_size",
            "study.n_steps": "n_steps",
            "study.replicas": "replicas",
            "study.dense_stride": "dense_stride",
            "study.dense_until": "dense_until",
            "study.sparse_stride": "sparse_stride",
            "study.late_window": "late_window",
            "study.initial_law": "initial_law",
            "study.initial_scale": "initial_scale",
            "study.sup_ratio_max": "sup_ratio_max",
        },
    ),
    "perf": (
        PerfConfig,
        {
            "grid.full_n": "full_n_grid",
            "grid.batched_n": "batched_n_grid",
            "study.batched_fit_min_n": "batched_fit_min_n",
            "study.batch_size": "batch_size",
            "study.repeats": "repeats",
            "study.warmup": "warmup",
            "study.speedup_n": "speedup_n",
            "study.speedup_min": "speedup_min",
            "study.full_slope_window": "full_slope_window",
            "study.batched_slope_window": "batched_slope_window",
        },
    ),
    "simulate": (
        SimulateConfig,
        {
            "study.process": "process",
            "study.n_particles": "n_particles",
            "study.batch_size": "batch_size",
            "study.tau": "tau",
            "study.n_steps": "n_steps",
            "study.snapshot_every": "snapshot_every",
            "study.replicas": "replicas",
            "study.initial_law": "initial_law",
            "study.initial_scale": "initial_scale",
        },
    ),
    "check-model": (
        CheckModelConfig,
        {
            "study.grid_radius": "grid_radius",
            "study.grid_points": "grid_points",
        },
    ),
}

_RUNNERS = {
    "strong-order": run_strong_order_study,
    "longtime": run_longtime_study,
    "chaos": run_chaos_study,
    "stability": run_stability_study,
    "perf": run_perf_benchmark,
}


def _schema_keys(study: str) -> dict[str, str]:
    _, study_keys = _SCHEMAS[study]
    return {**_MODEL_KEYS, **study_keys, **_RUN_KEYS}


def _coerce_like(default, value):
    """Match a TOML value to the dataclass default's shape."""
    if isinstance(default, tuple) or (default is None and isinstance(value, list)):
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool) and not isinstance(default, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"expected integer, got {value}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _help_epilog(study: str) -> str:
    cfg_type, _ = _SCHEMAS[study]
    defaults = cfg_type()
    lines = ["config keys (TOML section.key, also usable with --set):"]
    for dotted, attr in sorted(_schema_keys(study).items()):
        if dotted.startswith("model."):
            val = getattr(defaults.model, attr)
        elif dotted.startswith("run."):
            val = getattr(defaults, attr)
        else:
            val = getattr(defaults, attr)
        lines.append(f"  {dotted:28s} default: {val!r}")
    return "\n".join(lines)


def _parse_set(entry: str) -> tuple[str, object]:
    if "=" not in entry:
        raise ConfigurationError(f"--set expects key=value, got {entry!r}")
    key, raw = entry.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare string convenience
    return key.strip(), value


def _flatten_file(config_path: str) -> dict[str, object]:
    if not os.path.exists(config_path):
        raise ConfigurationError(f"config file not found: {config_path}")
    with open(config_path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{config_path}: invalid TOML: {exc}") from None
    flat = {}
    for section, content in data.items():
        if not isinstance(content, dict):
            raise ConfigurationError(f"{config_path}: top-level key {section!r} must be a section")
        for key, value in content.items():
            flat[f"{section}.{key}"] = value
    return flat


def resolve_config(study: str, args) -> object:
    """Merge defaults <- config file <- --set overrides <- explicit flags."""
    cfg_type, _ = _SCHEMAS[study]
    keys = _schema_keys(study)
    overrides: dict[str, object] = {}
    if args.config:
        overrides.update(_flatten_file(args.config))
    for entry in args.set or []:
        key, value = _parse_set(entry)
        overrides[key] = value
    unknown = sorted(set(overrides) - set(keys))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)} (see --help)")

    defaults = cfg_type()
    model_kwargs = asdict(defaults.model) if hasattr(defaults, "model") else {}
    cfg_kwargs: dict[str, object] = {}
    for dotted, value in overrides.items():
        attr = keys[dotted]
        if dotted.startswith("model."):
            model_kwargs[attr] = _coerce_like(model_kwargs[attr], value)
        else:
            cfg_kwargs[attr] = _coerce_like(getattr(defaults, attr), value)
    if args.seed is not None:
        cfg_kwargs["seed"] = int(args.seed)
    if args.threads is not None:
        cfg_kwargs["threads"] = int(args.threads)
    if getattr(args, "allow_unstable_tau", False):
        cfg_kwargs["allow_unstable_tau"] = True
    if hasattr(defaults, "model"):
        cfg_kwargs["model"] = ModelSpec(**model_kwargs)
    try:
        return dataclasses.replace(defaults, **cfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from None


def _emit_study_outputs(result: StudyResult, out_dir: str, manifest: RunManifest, manifest_path: str) -> None:
    outputs = []
    for table in result.tables:
        path = os.path.join(out_dir, f"{table.name}.csv")
        write_csv(path, table.columns, table.rows, result.fingerprint, result.config)
        outputs.append(path)
    if result.fits:
        path = os.path.join(out_dir, f"{result.study.replace('-', '_')}_fits.json")
        write_fits_json(path, result.fits, result.fingerprint)
        outputs.append(path)
    manifest.outputs = outputs
    manifest.warnings = list(result.warnings)
    for line in result.warnings:
        print(f"[WARN] {line}")
    for a in result.assertions:
        print(f"[{'PASS' if a.passed else 'FAIL'}] {a.name}: {a.detail}")
    for path in outputs:
        print(f"wrote {path}")
    manifest.assertions_passed = result.ok
    manifest.write(manifest_path)


def _run_study(study: str, args) -> int:
    cfg = resolve_config(study, args)
    out_dir = args.out_dir or os.path.join("out", study.replace("-", "_"))
    config_dict = {"study": study, **asdict(cfg)}
    manifest = RunManifest(
        command=study,
        config=config_dict,
        seed=cfg.seed,
        fingerprint=fingerprint_of(config_dict),
        out_dir=out_dir,
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest.write(manifest_path)
    t0 = time.perf_counter()
    try:
        result = _RUNNERS[study](cfg)
    except DivergenceError as exc:
        print(f"divergence at step {exc.step_index}", file=sys.stderr)
        manifest.wall_clock_seconds = time.perf_counter() - t0
        manifest.write(manifest_path)
        return EXIT_DIVERGENCE
    manifest.wall_clock_seconds = time.perf_counter() - t0
    _emit_study_outputs(result, out_dir, manifest, manifest_path)
    return EXIT_OK if result.ok else EXIT_ASSERTION


def _run_check_model(args) -> int:
    cfg = resolve_config("check-model", args)
    report = check_assumptions(cfg.model.build(), cfg.grid_radius, cfg.grid_points)
    print(f"model: {cfg.model.family} params={asdict(cfg.model)}")
    print(f"tau0 = {report.tau0:g}")
    print(f"growth bound (L0) holds on grid:      {report.l0_ok}")
    print(f"kernel bound (L1) holds on grid:      {report.l1_ok}")
    print(f"dissipation bound holds on grid:      {report.dissipation_ok}")
    print(f"contraction quotient positive (tail): {report.kappa_asymptotically_positive}")
    tail = report.kappa_samples[-3:]
    print("kappa samples (largest separations): " + ", ".join(f"r={r:g}: {k:.4g}" for r, k in tail))
    return EXIT_OK if report.all_ok else EXIT_ASSERTION


def _run_simulate(args) -> int:
    cfg = resolve_config("simulate", args)
    out_dir = args.out_dir or os.path.join("out", "simulate")
    config_dict = {"study": "simulate", **asdict(cfg)}
    fp = fingerprint_of(config_dict)
    manifest = RunManifest(
        command="simulate",
        config=config_dict,
        seed=cfg.seed,
        fingerprint=fp,
        out_dir=out_dir,
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest.write(manifest_path)
    t0 = time.perf_counter()
    model = cfg.model.build()
    batched = cfg.process == "discrete_rbips"
    if cfg.process not in ("discrete_ips", "discrete_rbips"):
        raise ConfigurationError(f"process must be discrete_ips or discrete_rbips, got {cfg.process!r}")
    law = InitialLaw(cfg.initial_law, cfg.initial_scale)
    levels = max(0, math.ceil(math.log2(max(1, cfg.n_steps))))
    rows = []
    try:
        for rep in range(cfg.replicas):
            noise = make_noise_plan(
                derive_seed(cfg.seed, 6, 0, rep, 0), cfg.n_particles, cfg.model.dim,
                cfg.tau * (1 << levels), levels,
            )
            parts = (
                make_partition_plan(derive_seed(cfg.seed, 6, 0, rep, 1), cfg.n_particles, cfg.batch_size, cfg.n_steps)
                if batched
                else None
            )
            rec = simulate(
                cfg.process, model, cfg.n_particles, cfg.batch_size if batched else None,
                cfg.tau, cfg.n_steps, noise, parts,
                snapshot_every=cfg.snapshot_every, initial_law=law,
            )
            for step in rec.steps:
                pos = rec.positions(step)
                for i in range(pos.shape[0]):
                    for c in range(pos.shape[1]):
                        rows.append(
                            {
                                "replica": rep,
                                "process_tag": cfg.process,
                                "step": step,
                                "particle": i,
                                "coord": c,
                                "value": float(pos[i, c]),
                            }
                        )
    except DivergenceError as exc:
        print(f"divergence at step {exc.step_index}", file=sys.stderr)
        return EXIT_DIVERGENCE
    path = os.path.join(out_dir, "snapshots.csv")
    write_csv(path, ["replica", "process_tag", "step", "particle", "coord", "value"], rows, fp, config_dict)
    manifest.outputs = [path]
    manifest.wall_clock_seconds = time.perf_counter() - t0
    manifest.write(manifest_path)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbsim",
        description="Random-batch interacting-particle simulation and error measurement harness.",
    )
    parser.add_argument("--version", action="version", version=f"rbsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "check-model": "verify a builtin model's declared constants on a sample grid",
        "simulate": "run a discrete process and export snapshot CSV",
        "strong-order": "coupled strong error vs time step / batch size",
        "longtime": "Wasserstein sampling error vs time; decay and plateau fits",
        "chaos": "late-time empirical-measure error vs particle count",
        "stability": "fourth-moment boundedness across the stability threshold",
        "perf": "per-step cost of full vs batched force evaluation",
    }
    for name, desc in descriptions.items():
        p = sub.add_parser(
            name,
            help=desc,
            description=desc,
            epilog=_help_epilog(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="top-level seed")
        p.add_argument("--out-dir", help="output directory (default: out/<study>)")
        p.add_argument("--threads", type=int, default=None, help="worker processes (default: machine parallelism)")
        p.add_argument("--allow-unstable-tau", action="store_true", help="permit taus at or above tau0")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    try:
        if args.command == "check-model":
            return _run_check_model(args)
        if args.command == "simulate":
            return _run_simulate(args)
        return _run_study(args.command, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RbsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
