"""Scripted studies that bind the integrators to the error metrics.

Each study consumes a frozen config dataclass, returns tables of CSV-ready
rows plus fit records, and embeds its own pass/fail checks so the CLI can
report one line per check and exit nonzero on failure.  All randomness flows
from the config seed through the derivation
(seed, study code, grid index, replica, role); any replica can be re-run in
isolation.  Replica reductions happen in replica order, so results do not
depend on the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError, FitError
from .metrics import ErrorSeries, fit_decay, fit_order, strong_error, w1_empirical_1d, w1_vs_gaussian_1d
from .model import ForceModel, builtin_model, pairwise_force_batched, pairwise_force_full, tau0_bound
from .rng import derive_seed, make_noise_plan, make_partition_plan, philox_from
from .sim import InitialLaw, mean_field_oracle, reference_ips, reference_rbips, simulate
from .runio import fingerprint_of

__all__ = [
    "ModelSpec",
    "Assertion",
    "Table",
    "StudyResult",
    "StrongOrderConfig",
    "LongtimeConfig",
    "ChaosConfig",
    "StabilityConfig",
    "PerfConfig",
    "run_strong_order_study",
    "run_longtime_study",
    "run_chaos_study",
    "run_stability_study",
    "run_perf_benchmark",
]

STUDY_CODES = {
    "strong-order": 1,
    "longtime": 2,
    "chaos": 3,
    "stability": 4,
    "perf": 5,
    "simulate": 6,
}

ROLE_REPLICA_NOISE = 0
ROLE_REPLICA_PARTITION = 1
ROLE_SUBSAMPLE = 2
ROLE_ORACLE = 3
ROLE_TIMING_STATE = 4


@dataclass(frozen=True)
class ModelSpec:
    """Builtin model selection by family name and parameter map."""

    family: str = "ou_sine"
    alpha: float = 1.0
    eps: float = 0.1
    sigma: float = math.sqrt(2.0)
    dim: int = 1

    def build(self) -> ForceModel:
        return builtin_model(self.family, alpha=self.alpha, eps=self.eps, sigma=self.sigma, dim=self.dim)

    @property
    def tau0(self) -> float:
        # builtin drift is -alpha x, so L0 = alpha
        return tau0_bound(self.alpha, self.alpha)

    @property
    def invariant_std(self) -> float:
        """Stationary per-coordinate std of the kernel-free dynamics."""
        return self.sigma / math.sqrt(2.0 * self.alpha)


@dataclass(frozen=True)
class Assertion:
    name: str
    passed: bool
    detail: str


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[dict]


@dataclass
class StudyResult:
    study: str
    fingerprint: str
    config: dict
    tables: list[Table] = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    assertions: list[Assertion] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(a.passed for a in self.assertions)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def _pmap(fn, items: Sequence, threads: int) -> list:
    """Map preserving item order; work items must be picklable when threads > 1."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunk = max(1, len(items) // (threads * 4))
        return list(pool.map(fn, items, chunksize=chunk))


def _dyadic_steps(horizon: float, tau: float) -> int:
    ratio = horizon / tau
    k = round(math.log2(ratio))
    if k < 0 or abs(ratio - (1 << max(k, 0))) > 1e-9 * ratio:
        raise ConfigurationError(f"tau {tau} must be horizon/2^k for the dyadic noise grid")
    return k


def _step_count(horizon: float, tau: float) -> int:
    """Macro steps covering the horizon; tau need not divide it dyadically."""
    n = max(1, round(horizon / tau))
    if abs(n * tau - horizon) > 1e-6 * max(1.0, horizon):
        raise ConfigurationError(f"tau {tau} does not evenly divide the horizon {horizon}")
    return n


def _padded_plan_shape(tau: float, n_steps: int) -> tuple[float, int]:
    """Noise-plan (horizon, levels) whose dyadic grid covers n_steps of tau."""
    levels = max(0, math.ceil(math.log2(max(1, n_steps))))
    return tau * (1 << levels), levels


def _check_taus(spec: ModelSpec, taus: Sequence[float], allow_unstable: bool) -> None:
    tau0 = spec.tau0
    bad = [t for t in taus if t >= tau0]
    if bad and not allow_unstable:
        raise ConfigurationError(
            f"taus {bad} are at or above the stability threshold tau0={tau0}; "
            "pass allow_unstable_tau to run the instability demonstration"
        )


def _study_fingerprint(study: str, cfg) -> tuple[str, dict]:
    config = {"study": study, **asdict(cfg)}
    return fingerprint_of(config), config


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    m = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return m, se


# ---------------------------------------------------------------------------
# strong-order study

PAIR_NAMES = (
    "discrete_ips_vs_reference_ips",
    "discrete_rbips_vs_reference_rbips",
    "reference_rbips_vs_reference_ips",
    "discrete_rbips_vs_reference_ips",
)
TOTAL_PAIR = "discrete_rbips_vs_reference_ips"
BATCHING_PAIR = "reference_rbips_vs_reference_ips"


@dataclass(frozen=True)
class StrongOrderConfig:
    """Coupled-quadruple strong error versus time step and batch size.

    With several taus and one batch size the study fits convergence orders;
    with one tau and several batch sizes it checks that the batching error
    decreases in p.
    """

    model: ModelSpec = ModelSpec(family="ou_sine", alpha=0.25, eps=0.1, sigma=1.0, dim=1)
    taus: tuple = (2**-4, 2**-5, 2**-6, 2**-7, 2**-8, 2**-9)
    n_particles: int = 64
    batch_sizes: tuple = (2,)
    horizon: float = 1.0
    replicas: int = 200
    refine_levels: int = 2
    initial_law: str = "dirac"
    initial_scale: float = 1.0
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = False
    slope_window: tuple = (0.8, 1.3)
    min_r_squared: float = 0.98


def _strong_order_replica(args) -> dict:
    (spec, n, p, tau, horizon, refine, law_kind, law_scale, noise_seed, part_seed) = args
    model = spec.build()
    k = _dyadic_steps(horizon, tau)
    n_steps = 1 << k
    law = InitialLaw(law_kind, law_scale)
    noise = make_noise_plan(noise_seed, n, spec.dim, horizon, k + refine)
    parts = make_partition_plan(part_seed, n, p, n_steps)
    runs = {
        "discrete_ips": simulate("discrete_ips", model, n, None, tau, n_steps, noise, initial_law=law),
        "discrete_rbips": simulate("discrete_rbips", model, n, p, tau, n_steps, noise, parts, initial_law=law),
        "reference_ips": reference_ips(model, n, tau, n_steps, noise, refine, initial_law=law),
        "reference_rbips": reference_rbips(model, n, p, tau, n_steps, noise, parts, refine, initial_law=law),
    }
    out = {}
    for name in PAIR_NAMES:
        a, b = name.split("_vs_")
        out[name] = strong_error(runs[a], runs[b]).values
    return out


def run_strong_order_study(cfg: StrongOrderConfig) -> StudyResult:
    fp, config = _study_fingerprint("strong-order", cfg)
    _check_taus(cfg.model, cfg.taus, cfg.allow_unstable_tau)
    for p in cfg.batch_sizes:
        if cfg.n_particles % p != 0:
            raise ConfigurationError(f"batch size {p} does not divide N={cfg.n_particles}")
    result = StudyResult("strong-order", fp, config)
    rows = []
    code = STUDY_CODES["strong-order"]
    for gi, (tau, p) in enumerate(product(cfg.taus, cfg.batch_sizes)):
        items = [
            (
                cfg.model,
                cfg.n_particles,
                p,
                tau,
                cfg.horizon,
                cfg.refine_levels,
                cfg.initial_law,
                cfg.initial_scale,
                derive_seed(cfg.seed, code, gi, rep, ROLE_REPLICA_NOISE),
                derive_seed(cfg.seed, code, gi, rep, ROLE_REPLICA_PARTITION),
            )
            for rep in range(cfg.replicas)
        ]
        try:
            replica_values = _pmap(_strong_order_replica, items, cfg.threads)
        except DivergenceError as exc:
            result.warnings.append(f"tau={tau} p={p}: diverged at step {exc.step_index}")
            for pair in PAIR_NAMES:
                rows.append({"pair": pair, "tau": tau, "batch_size": p, "mse_sup": None, "stderr": None, "failed": 1})
            continue
        for pair in PAIR_NAMES:
            stack = np.stack([rv[pair] for rv in replica_values])
            mean = stack.mean(axis=0)
            idx = int(np.argmax(mean))
            se = float(stack[:, idx].std(ddof=1) / math.sqrt(len(stack))) if len(stack) > 1 else 0.0
            rows.append(
                {
                    "pair": pair,
                    "tau": tau,
                    "batch_size": p,
                    "mse_sup": float(mean[idx]),
                    "stderr": se,
                    "failed": 0,
                }
            )
    result.tables.append(Table("strong_order", ["pair", "tau", "batch_size", "mse_sup", "stderr", "failed"], rows))

    if len(cfg.batch_sizes) == 1:
        p = cfg.batch_sizes[0]
        for pair in PAIR_NAMES:
            pts = [(r["tau"], r["mse_sup"]) for r in rows if r["pair"] == pair and not r["failed"]]
            pts.sort()
            try:
                series = ErrorSeries([t for t, _ in pts], [v for _, v in pts], "strong_mse")
                fit = fit_order(series)
                result.fits[f"order_{pair}_p{p}"] = fit
            except FitError as exc:
                if pair == TOTAL_PAIR:
                    result.assertions.append(Assertion("strong_error_order_slope", False, f"order fit failed: {exc}"))
                continue
            if pair == TOTAL_PAIR:
                lo, hi = cfg.slope_window
                result.assertions.append(
                    Assertion(
                        "strong_error_order_slope",
                        lo <= fit.slope_hat <= hi,
                        f"slope={fit.slope_hat:.3f} window=[{lo}, {hi}]",
                    )
                )
                result.assertions.append(
                    Assertion(
                        "strong_error_order_r2",
                        fit.r_squared >= cfg.min_r_squared,
                        f"r2={fit.r_squared:.4f} min={cfg.min_r_squared}",
                    )
                )
    if len(cfg.batch_sizes) >= 2:
        tau = cfg.taus[0]
        seq = [
            (r["batch_size"], r["mse_sup"], r["stderr"])
            for r in rows
            if r["pair"] == BATCHING_PAIR and r["tau"] == tau and not r["failed"]
        ]
        seq.sort()
        ok = True
        gaps = []
        for (p1, m1, s1), (p2, m2, s2) in zip(seq, seq[1:]):
            margin = 2.0 * math.hypot(s1, s2)
            gaps.append(f"p{p1}->p{p2}: {m1:.3e}-{m2:.3e} margin {margin:.1e}")
            if not (m1 - m2 > margin):
                ok = False
        result.assertions.append(Assertion("batching_error_p_monotone", ok, "; ".join(gaps)))
    return result


# ---------------------------------------------------------------------------
# long-time sampling study

@dataclass(frozen=True)
class LongtimeConfig:
    """Wasserstein distance of the batched sampler to the invariant law over time.

    The pooled single-particle empirical law at each snapshot is compared with
    the exact Gaussian target when the model is kernel-free, otherwise with a
    pooled late-time sample of the mean-field reference.  Curves are fit as
    plateau + exponential; the plateau itself is re-estimated from the pooled
    tail for the plateau-versus-tau channel.
    """

    model: ModelSpec = ModelSpec(family="ou", alpha=2.0, eps=0.0, sigma=2.0, dim=1)
    taus: tuple = (2**-4, 2**-5, 2**-6, 2**-7, 2**-8)
    n_grid: tuple = (64,)
    batch_size: int = 2
    horizon: float = 20.0
    pool_target: int = 75000
    pool_min: int = 6400
    curve_points: int = 192
    dense_dt: float = 2**-5
    dense_until_t: float = 3.0
    tail_start_frac: float = 0.6
    initial_law: str = "dirac"
    initial_scale: float = 1.0
    oracle_n_ref: Optional[int] = None
    oracle_tau_fine: float = 2**-5
    oracle_horizon: float = 20.0
    oracle_tail_snaps: int = 16
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = False
    lambda_spread_max: float = 0.30
    plateau_slope_min: float = 0.4
    min_r_squared: float = 0.9


def _longtime_replica(args) -> np.ndarray:
    (spec, n, p, tau, horizon, schedule, law_kind, law_scale, noise_seed, part_seed) = args
    model = spec.build()
    n_steps = _step_count(horizon, tau)
    plan_horizon, levels = _padded_plan_shape(tau, n_steps)
    noise = make_noise_plan(noise_seed, n, spec.dim, plan_horizon, levels)
    parts = make_partition_plan(part_seed, n, p, n_steps)
    rec = simulate(
        "discrete_rbips", model, n, p, tau, n_steps, noise, parts,
        snapshot_steps=schedule, initial_law=InitialLaw(law_kind, law_scale),
    )
    return np.stack([rec.positions(s)[:, 0] for s in rec.steps]).astype(np.float32)


def _longtime_schedule(cfg: "LongtimeConfig", tau: float, n_steps: int) -> tuple[int, ...]:
    """Snapshot steps: dense while the transient decays, then a coarse stride."""
    dense_stride = max(1, round(cfg.dense_dt / tau))
    dense_until = min(n_steps, round(cfg.dense_until_t / tau))
    steps = set(range(dense_stride, dense_until + 1, dense_stride))
    sparse_stride = max(1, n_steps // cfg.curve_points)
    steps |= set(range(sparse_stride, n_steps + 1, sparse_stride))
    steps.add(n_steps)
    return tuple(sorted(steps))


def _oracle_pool(spec: ModelSpec, n_ref: int, tau_fine: float, horizon: float, tail_snaps: int, seed: int) -> np.ndarray:
    n_steps = max(1, round(horizon / tau_fine))
    snap = max(1, n_steps // (2 * tail_snaps))
    rec = mean_field_oracle(spec.build(), n_ref, tau_fine, n_steps, seed, snapshot_every=snap)
    steps = rec.steps[-tail_snaps:]
    return np.sort(np.concatenate([rec.positions(s)[:, 0] for s in steps]))


def _subsampled(pool: np.ndarray, count: int, seed: int) -> np.ndarray:
    if len(pool) <= count:
        return pool
    gen = np.random.Generator(philox_from((seed, ROLE_SUBSAMPLE)))
    return pool[gen.choice(len(pool), size=count, replace=False)]


class _Target:
    """Distance to the invariant-law estimate: exact Gaussian or pooled oracle."""

    def __init__(self, spec: ModelSpec, pool: Optional[np.ndarray]):
        self.spec = spec
        self.pool = pool

    def distance(self, samples: np.ndarray, seed: int) -> float:
        if self.pool is None:
            return w1_vs_gaussian_1d(samples, 0.0, self.spec.invariant_std)
        if len(self.pool) >= len(samples):
            return w1_empirical_1d(samples, _subsampled(self.pool, len(samples), seed))
        return w1_empirical_1d(_subsampled(samples, len(self.pool), seed), self.pool)


def _build_target(cfg, n_max: int, warnings: list[str]) -> _Target:
    spec = cfg.model
    if spec.build().kernel is None:
        return _Target(spec, None)
    n_ref = cfg.oracle_n_ref or 16 * n_max
    if n_ref < 8 * n_max:
        warnings.append(f"oracle n_ref={n_ref} is not much larger than max n={n_max}")
    pool = _oracle_pool(
        spec, n_ref, cfg.oracle_tau_fine, cfg.oracle_horizon, cfg.oracle_tail_snaps,
        derive_seed(cfg.seed, STUDY_CODES[cfg_study_name(cfg)], ROLE_ORACLE),
    )
    return _Target(spec, pool)


def cfg_study_name(cfg) -> str:
    return {"LongtimeConfig": "longtime", "ChaosConfig": "chaos"}[type(cfg).__name__]


def run_longtime_study(cfg: LongtimeConfig) -> StudyResult:
    fp, config = _study_fingerprint("longtime", cfg)
    if cfg.model.dim != 1:
        raise ConfigurationError("longtime study requires dim=1 for exact scalar W1 targets")
    _check_taus(cfg.model, cfg.taus, cfg.allow_unstable_tau)
    for n in cfg.n_grid:
        if n % cfg.batch_size != 0:
            raise ConfigurationError(f"batch size {cfg.batch_size} does not divide N={n}")
    result = StudyResult("longtime", fp, config)
    target = _build_target(cfg, max(cfg.n_grid), result.warnings)
    code = STUDY_CODES["longtime"]

    curve_rows, plateau_rows = [], []
    lambdas: dict[float, dict[int, float]] = {}
    plateaus: dict[int, dict[float, float]] = {}
    tau_min = min(cfg.taus)
    for gi, (n, tau) in enumerate(product(cfg.n_grid, cfg.taus)):
        # The plateau shrinks like tau, so the pooled-sample floor must shrink
        # with it; larger taus get away with smaller pools.
        pool = min(cfg.pool_target, max(cfg.pool_min, math.ceil(cfg.pool_target * (tau_min / tau) ** 2)))
        reps = max(1, math.ceil(pool / n))
        n_steps = _step_count(cfg.horizon, tau)
        schedule = _longtime_schedule(cfg, tau, n_steps)
        items = [
            (
                cfg.model, n, cfg.batch_size, tau, cfg.horizon, schedule,
                cfg.initial_law, cfg.initial_scale,
                derive_seed(cfg.seed, code, gi, rep, ROLE_REPLICA_NOISE),
                derive_seed(cfg.seed, code, gi, rep, ROLE_REPLICA_PARTITION),
            )
            for rep in range(reps)
        ]
        blocks = _pmap(_longtime_replica, items, cfg.threads)
        pooled = np.concatenate(blocks, axis=1)  # (snaps, reps*n)
        snap_steps = (0,) + schedule
        times = np.asarray(snap_steps, dtype=float) * tau
        values = np.array(
            [target.distance(pooled[j], derive_seed(cfg.seed, code, gi, j)) for j in range(len(snap_steps))]
        )
        for t, v in zip(times, values):
            curve_rows.append({"n_particles": n, "tau": tau, "t": float(t), "w1": float(v)})
        series = ErrorSeries(times, values, "w1", {"n": n, "tau": tau})
        fit = None
        try:
            fit = fit_decay(series)
            result.fits[f"decay_n{n}_tau{tau!r}"] = fit
        except FitError as exc:
            result.warnings.append(f"n={n} tau={tau:g}: decay fit window error: {exc}")
        result.assertions.append(
            Assertion(
                f"decay_fit_r2[n={n},tau={tau:g}]",
                fit is not None and fit.r_squared >= cfg.min_r_squared,
                "fit failed" if fit is None else f"r2={fit.r_squared:.4f} min={cfg.min_r_squared}",
            )
        )
        tail = times >= cfg.tail_start_frac * cfg.horizon
        tail_pool = pooled[tail].ravel()
        plateau = target.distance(tail_pool, derive_seed(cfg.seed, code, gi, ROLE_SUBSAMPLE, 1))
        plateau_rows.append(
            {
                "n_particles": n,
                "tau": tau,
                "plateau_w1": float(plateau),
                "n_pool": int(tail_pool.size),
                "lambda_hat": None if fit is None else fit.lambda_hat,
                "fit_r2": None if fit is None else fit.r_squared,
            }
        )
        if fit is not None and fit.lambda_hat is not None:
            lambdas.setdefault(tau, {})[n] = fit.lambda_hat
        plateaus.setdefault(n, {})[tau] = float(plateau)

    result.tables.append(Table("longtime_curve", ["n_particles", "tau", "t", "w1"], curve_rows))
    result.tables.append(
        Table(
            "longtime_plateau",
            ["n_particles", "tau", "plateau_w1", "n_pool", "lambda_hat", "fit_r2"],
            plateau_rows,
        )
    )

    for tau, by_n in lambdas.items():
        if len(by_n) >= 2:
            vals = np.array(list(by_n.values()))
            spread = float((vals.max() - vals.min()) / vals.mean())
            result.assertions.append(
                Assertion(
                    f"lambda_n_independence[tau={tau:g}]",
                    spread <= cfg.lambda_spread_max,
                    f"lambdas={ {k: round(v, 4) for k, v in by_n.items()} } spread={spread:.3f} max={cfg.lambda_spread_max}",
                )
            )
    for n, by_tau in plateaus.items():
        if len(by_tau) >= 3:
            taus_sorted = sorted(by_tau)
            series = ErrorSeries(taus_sorted, [by_tau[t] for t in taus_sorted], "w1")
            try:
                pfit = fit_order(series)
                result.fits[f"plateau_slope_n{n}"] = pfit
                result.assertions.append(
                    Assertion(
                        f"plateau_tau_slope[n={n}]",
                        pfit.slope_hat >= cfg.plateau_slope_min,
                        f"slope={pfit.slope_hat:.3f} min={cfg.plateau_slope_min}",
                    )
                )
            except FitError as exc:
                result.assertions.append(Assertion(f"plateau_tau_slope[n={n}]", False, f"fit failed: {exc}"))
    return result


# ---------------------------------------------------------------------------
# propagation-of-chaos study

@dataclass(frozen=True)
class ChaosConfig:
    """Late-time E[W1(empirical law, mean-field invariant estimate)] versus N."""

    model: ModelSpec = ModelSpec(family="ou", alpha=1.0, eps=0.0, sigma=math.sqrt(2.0), dim=1)
    n_grid: tuple = (16, 64, 256, 1024)
    tau: float = 2**-8
    batch_size: int = 2
    horizon: float = 8.0
    replicas: int = 200
    initial_law: str = "dirac"
    initial_scale: float = 1.0
    oracle_n_ref: Optional[int] = None
    oracle_tau_fine: float = 2**-5
    oracle_horizon: float = 20.0
    oracle_tail_snaps: int = 16
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = False
    slope_window: tuple = (-0.65, -0.35)


def _chaos_replica(args) -> np.ndarray:
    (spec, n, p, tau, horizon, law_kind, law_scale, noise_seed, part_seed) = args
    model = spec.build()
    n_steps = _step_count(horizon, tau)
    plan_horizon, levels = _padded_plan_shape(tau, n_steps)
    noise = make_noise_plan(noise_seed, n, spec.dim, plan_horizon, levels)
    parts = make_partition_plan(part_seed, n, p, n_steps)
    rec = simulate(
        "discrete_rbips", model, n, p, tau, n_steps, noise, parts,
        snapshot_every=n_steps, initial_law=InitialLaw(law_kind, law_scale),
    )
    return rec.positions(n_steps)[:, 0]


def run_chaos_study(cfg: ChaosConfig) -> StudyResult:
    fp, config = _study_fingerprint("chaos", cfg)
    if cfg.model.dim != 1:
        raise ConfigurationError("chaos study requires dim=1 for exact scalar W1 targets")
    _check_taus(cfg.model, [cfg.tau], cfg.allow_unstable_tau)
    for n in cfg.n_grid:
        if n % cfg.batch_size != 0:
            raise ConfigurationError(f"batch size {cfg.batch_size} does not divide N={n}")
    result = StudyResult("chaos", fp, config)
    target = _build_target(cfg, max(cfg.n_grid), result.warnings)
    code = STUDY_CODES["chaos"]

    rows = []
    for ni, n in enumerate(sorted(cfg.n_grid)):
        items = [
            (
                cfg.model, n, cfg.batch_size, cfg.tau, cfg.horizon,
                cfg.initial_law, cfg.initial_scale,
                derive_seed(cfg.seed, code, ni, rep, ROLE_REPLICA_NOISE),
                derive_seed(cfg.seed, code, ni, rep, ROLE_REPLICA_PARTITION),
            )
            for rep in range(cfg.replicas)
        ]
        terminals = _pmap(_chaos_replica, items, cfg.threads)
        dists = np.array(
            [target.distance(pos, derive_seed(cfg.seed, code, ni, rep, ROLE_SUBSAMPLE)) for rep, pos in enumerate(terminals)]
        )
        m, se = _mean_se(dists)
        rows.append({"n_particles": n, "w1_mean": m, "stderr": se, "replicas": cfg.replicas})
    result.tables.append(Table("chaos", ["n_particles", "w1_mean", "stderr", "replicas"], rows))

    try:
        series = ErrorSeries([r["n_particles"] for r in rows], [r["w1_mean"] for r in rows], "w1")
        fit = fit_order(series)
        result.fits["chaos_slope"] = fit
        lo, hi = cfg.slope_window
        result.assertions.append(
            Assertion("chaos_w1_slope", lo <= fit.slope_hat <= hi, f"slope={fit.slope_hat:.3f} window=[{lo}, {hi}]")
        )
    except FitError as exc:
        result.assertions.append(Assertion("chaos_w1_slope", False, f"fit failed: {exc}"))
    return result


# ---------------------------------------------------------------------------
# moment stability study

@dataclass(frozen=True)
class StabilityConfig:
    """Fourth-moment boundedness below tau0 and divergence detection above."""

    model: ModelSpec = ModelSpec(family="ou", alpha=1.0, eps=0.0, sigma=math.sqrt(2.0), dim=1)
    taus: tuple = (0.25, 2.5)
    n_particles: int = 64
    batch_size: int = 2
    n_steps: int = 100_000
    replicas: int = 32
    dense_stride: int = 4
    dense_until: int = 128
    sparse_stride: int = 64
    late_window: tuple = (10.0, 20.0)
    initial_law: str = "dirac"
    initial_scale: float = 1.0
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = True
    sup_ratio_max: float = 1.5


def _stability_schedule(cfg: StabilityConfig) -> list[int]:
    steps = set(range(cfg.dense_stride, min(cfg.dense_until, cfg.n_steps) + 1, cfg.dense_stride))
    steps |= set(range(cfg.dense_until, cfg.n_steps + 1, cfg.sparse_stride))
    steps.add(cfg.n_steps)
    return sorted(steps)


def _stability_replica(args):
    (spec, n, p, tau, n_steps, schedule, law_kind, law_scale, noise_seed, part_seed) = args
    model = spec.build()
    plan_horizon, levels = _padded_plan_shape(tau, n_steps)
    noise = make_noise_plan(noise_seed, n, spec.dim, plan_horizon, levels)
    parts = make_partition_plan(part_seed, n, p, n_steps)
    try:
        rec = simulate(
            "discrete_rbips", model, n, p, tau, n_steps, noise, parts,
            snapshot_steps=schedule, initial_law=InitialLaw(law_kind, law_scale),
        )
    except DivergenceError as exc:
        return None, exc.step_index
    # Particles are exchangeable, so the per-particle expectation is estimated
    # by pooling over particles as well as replicas.
    moments = np.array(
        [float(np.mean(np.sum(rec.positions(s) ** 2, axis=1) ** 2)) for s in rec.steps if s > 0]
    )
    return moments, None


def run_stability_study(cfg: StabilityConfig) -> StudyResult:
    fp, config = _study_fingerprint("stability", cfg)
    tau0 = cfg.model.tau0
    if not cfg.allow_unstable_tau:
        _check_taus(cfg.model, cfg.taus, False)
    if cfg.n_particles % cfg.batch_size != 0:
        raise ConfigurationError("batch size must divide n_particles")
    result = StudyResult("stability", fp, config)
    code = STUDY_CODES["stability"]
    schedule = _stability_schedule(cfg)
    curve_rows, summary_rows = [], []
    for gi, tau in enumerate(cfg.taus):
        items = [
            (
                cfg.model, cfg.n_particles, cfg.batch_size, tau, cfg.n_steps, tuple(schedule),
                cfg.initial_law, cfg.initial_scale,
                derive_seed(cfg.seed, code, gi, rep, ROLE_REPLICA_NOISE),
                derive_seed(cfg.seed, code, gi, rep, ROLE_REPLICA_PARTITION),
            )
            for rep in range(cfg.replicas)
        ]
        outputs = _pmap(_stability_replica, items, cfg.threads)
        diverged_steps = [step for _, step in outputs if step is not None]
        if diverged_steps:
            summary_rows.append(
                {
                    "tau": tau,
                    "diverged": 1,
                    "divergence_step": min(diverged_steps),
                    "sup_moment4": None,
                    "late_window_max": None,
                    "ratio": None,
                }
            )
            expects = abs(1.0 - cfg.model.alpha * tau) > 1.0
            result.assertions.append(
                Assertion(
                    f"instability_flagged[tau={tau:g}]",
                    expects,
                    f"diverged at step {min(diverged_steps)}; |1-alpha*tau|={abs(1 - cfg.model.alpha * tau):.3f}",
                )
            )
            continue
        curve = np.mean([m for m, _ in outputs], axis=0)  # (snaps,)
        times = np.asarray(schedule, dtype=float) * tau
        stride_out = max(1, len(schedule) // 512)
        for t, v in zip(times[::stride_out], curve[::stride_out]):
            curve_rows.append({"tau": tau, "t": float(t), "moment4": float(v)})
        sup_all = float(curve.max())
        lo, hi = cfg.late_window
        mask = (times >= lo) & (times <= hi)
        if not mask.any():
            raise ConfigurationError(f"late window {cfg.late_window} has no snapshots at tau={tau}")
        late_max = float(curve[mask].max())
        ratio = sup_all / late_max if late_max > 0 else math.inf
        summary_rows.append(
            {
                "tau": tau,
                "diverged": 0,
                "divergence_step": None,
                "sup_moment4": sup_all,
                "late_window_max": late_max,
                "ratio": ratio,
            }
        )
        if tau < tau0:
            result.assertions.append(
                Assertion(
                    f"moment_sup_ratio[tau={tau:g}]",
                    ratio <= cfg.sup_ratio_max,
                    f"sup={sup_all:.4f} late_max={late_max:.4f} ratio={ratio:.3f} max={cfg.sup_ratio_max}",
                )
            )
    result.tables.append(Table("stability_curve", ["tau", "t", "moment4"], curve_rows))
    result.tables.append(
        Table(
            "stability_summary",
            ["tau", "diverged", "divergence_step", "sup_moment4", "late_window_max", "ratio"],
            summary_rows,
        )
    )
    return result


# ---------------------------------------------------------------------------
# force-evaluation cost benchmark

@dataclass(frozen=True)
class PerfConfig:
    """Per-step wall time of full versus batched force evaluation across N.

    Batched timing includes drawing the division, since resampling is part of
    every batched step.  Timing is single-threaded.
    """

    model: ModelSpec = ModelSpec(family="ou_sine", alpha=1.0, eps=0.1, sigma=math.sqrt(2.0), dim=1)
    full_n_grid: tuple = (512, 1024, 2048, 4096)
    batched_n_grid: tuple = (4096, 8192, 16384, 32768, 65536)
    batched_fit_min_n: int = 8192
    batch_size: int = 2
    repeats: int = 3
    warmup: int = 1
    speedup_n: int = 4096
    speedup_min: float = 10.0
    full_slope_window: tuple = (1.7, 2.3)
    batched_slope_window: tuple = (0.8, 1.3)
    seed: int = 20240808
    threads: int = 1
    allow_unstable_tau: bool = False


def _time_best(fn, warmup: int, repeats: int) -> float:
    for _ in range(warmup):
        fn()
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_perf_benchmark(cfg: PerfConfig) -> StudyResult:
    fp, config = _study_fingerprint("perf", cfg)
    model = cfg.model.build()
    result = StudyResult("perf", fp, config)
    rows = []
    timings: dict[tuple[str, int], float] = {}
    for n in cfg.full_n_grid:
        gen = np.random.Generator(philox_from((cfg.seed, ROLE_TIMING_STATE, n)))
        x = gen.standard_normal((n, cfg.model.dim))
        dt = _time_best(lambda: pairwise_force_full(model, x), cfg.warmup, cfg.repeats)
        timings[("full", n)] = dt
        rows.append({"mode": "full", "n_particles": n, "batch_size": None, "seconds_per_step": dt})
    for n in cfg.batched_n_grid:
        gen = np.random.Generator(philox_from((cfg.seed, ROLE_TIMING_STATE, n)))
        x = gen.standard_normal((n, cfg.model.dim))
        plan = make_partition_plan(derive_seed(cfg.seed, STUDY_CODES["perf"], n), n, cfg.batch_size, cfg.repeats + cfg.warmup)
        counter = iter(range(cfg.repeats + cfg.warmup))

        def step():
            division = plan.division(next(counter))
            pairwise_force_batched(model, x, division)

        dt = _time_best(step, cfg.warmup, cfg.repeats)
        timings[("batched", n)] = dt
        rows.append({"mode": "batched", "n_particles": n, "batch_size": cfg.batch_size, "seconds_per_step": dt})
    result.tables.append(Table("perf", ["mode", "n_particles", "batch_size", "seconds_per_step"], rows))
    for (mode, n), dt in timings.items():
        if dt < 1e-6:
            result.warnings.append(f"{mode} n={n}: per-step time {dt:.2e}s below timer resolution")

    full_series = ErrorSeries(list(cfg.full_n_grid), [timings[("full", n)] for n in cfg.full_n_grid], "time")
    fit_full = fit_order(full_series)
    result.fits["perf_full_slope"] = fit_full
    lo, hi = cfg.full_slope_window
    result.assertions.append(
        Assertion("perf_full_slope", lo <= fit_full.slope_hat <= hi, f"slope={fit_full.slope_hat:.3f} window=[{lo}, {hi}]")
    )
    batched_ns = [n for n in cfg.batched_n_grid if n >= cfg.batched_fit_min_n]
    batched_series = ErrorSeries(batched_ns, [timings[("batched", n)] for n in batched_ns], "time")
    fit_batched = fit_order(batched_series)
    result.fits["perf_batched_slope"] = fit_batched
    lo, hi = cfg.batched_slope_window
    result.assertions.append(
        Assertion(
            "perf_batched_slope", lo <= fit_batched.slope_hat <= hi, f"slope={fit_batched.slope_hat:.3f} window=[{lo}, {hi}]"
        )
    )
    if cfg.speedup_n in cfg.full_n_grid and cfg.speedup_n in cfg.batched_n_grid:
        speedup = timings[("full", cfg.speedup_n)] / timings[("batched", cfg.speedup_n)]
        result.assertions.append(
            Assertion(
                "perf_speedup",
                speedup >= cfg.speedup_min,
                f"full/batched at N={cfg.speedup_n}: {speedup:.1f}x (min {cfg.speedup_min}x)",
            )
        )
    return result
