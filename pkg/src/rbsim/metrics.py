"""Error functionals and estimators: coupled strong error, empirical
Wasserstein distances, moment tracking, and order/decay fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr, ndtri

from .errors import (
    CouplingError,
    FitError,
    FitWindowError,
    SampleSizeError,
    ValidationError,
)
from .sim import TrajectoryRecord

__all__ = [
    "ErrorSeries",
    "DecayFit",
    "strong_error",
    "average_series",
    "w1_empirical_1d",
    "w_p_assignment",
    "w1_vs_gaussian_1d",
    "moment_tracker",
    "fit_order",
    "fit_decay",
]

ASSIGNMENT_CAP = 2048

_SERIES_KINDS = ("strong_mse", "w1", "w2", "moment2", "moment4", "time")


@dataclass
class ErrorSeries:
    """Values of an error functional over an increasing abscissa.

    The abscissa may be time, the time step, or the particle count, depending
    on the producing study; ``kind`` names the functional.
    """

    abscissa: np.ndarray
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.abscissa.shape != self.values.shape or self.abscissa.ndim != 1:
            raise ValidationError("abscissa and values must be 1-D and equally long")
        if len(self.abscissa) and np.any(np.diff(self.abscissa) <= 0):
            raise ValidationError("abscissa must be strictly increasing")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValidationError("values must be finite and nonnegative")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)

    @property
    def sup(self) -> float:
        return float(np.max(self.values)) if len(self.values) else 0.0

    def __len__(self) -> int:
        return len(self.values)

    def to_csv_rows(self) -> list[dict]:
        """Flat (kind, abscissa, value, stderr, meta) rows for generic export."""
        meta = ";".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
        return [
            {
                "kind": self.kind,
                "abscissa": float(a),
                "value": float(v),
                "stderr": None if self.stderr is None else float(self.stderr[i]),
                "meta": meta,
            }
            for i, (a, v) in enumerate(zip(self.abscissa, self.values))
        ]


@dataclass(frozen=True)
class DecayFit:
    """Fitted description of an error series.

    ``slope_hat`` is a log-log order (set by fit_order); ``lambda_hat`` and
    ``plateau_hat`` describe value(t) ~ plateau + A exp(-lambda t) (set by
    fit_decay).  ``window`` is the index range the regression used.
    """

    lambda_hat: Optional[float]
    plateau_hat: Optional[float]
    slope_hat: Optional[float]
    r_squared: float
    window: tuple[int, int]

    def to_record(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "plateau_hat": self.plateau_hat,
            "slope_hat": self.slope_hat,
            "r_squared": self.r_squared,
            "window_lo": self.window[0],
            "window_hi": self.window[1],
        }


def _coupling_key(rec: TrajectoryRecord) -> dict:
    m = rec.meta
    return {
        "n_particles": m["n_particles"],
        "dim": m["dim"],
        "tau": m["tau"],
        "noise_seed": m["noise_seed"],
    }


def strong_error(traj_a: TrajectoryRecord, traj_b: TrajectoryRecord) -> ErrorSeries:
    """Per-snapshot normalized squared distance between coupled trajectories.

    Returns (1/N) sum_i |x_a^i - x_b^i|^2 at each common snapshot time; the
    running supremum is exposed via ``.sup``.  Records must come from the same
    noise plan (and the same partition plan when both are batched); comparing
    independent runs raises CouplingError.
    """
    ka, kb = _coupling_key(traj_a), _coupling_key(traj_b)
    if ka != kb:
        raise CouplingError(f"records are not coupled: {ka} vs {kb}")
    both_batched = (
        traj_a.meta.get("partition_seed") is not None
        and traj_b.meta.get("partition_seed") is not None
    )
    if both_batched and traj_a.meta["partition_seed"] != traj_b.meta["partition_seed"]:
        raise CouplingError("batched records use different partition plans")
    if traj_a.steps != traj_b.steps:
        raise CouplingError(f"snapshot steps differ: {traj_a.steps[:4]}... vs {traj_b.steps[:4]}...")

    steps = traj_a.steps
    n = traj_a.n_particles
    values = np.empty(len(steps))
    for j, s in enumerate(steps):
        d = traj_a.positions(s) - traj_b.positions(s)
        values[j] = float(np.sum(d * d)) / n
    times = np.asarray(steps, dtype=float) * traj_a.tau
    meta = {
        "pair": (traj_a.process_tag, traj_b.process_tag),
        "n_particles": n,
        "tau": traj_a.tau,
        "noise_seed": traj_a.meta["noise_seed"],
    }
    return ErrorSeries(times, values, "strong_mse", meta)


def average_series(series: Sequence[ErrorSeries]) -> ErrorSeries:
    """Pointwise mean of replica series with standard errors."""
    if not series:
        raise SampleSizeError("no series to average")
    first = series[0]
    for s in series[1:]:
        if s.kind != first.kind or not np.array_equal(s.abscissa, first.abscissa):
            raise CouplingError("series have mismatched kinds or abscissae")
    stack = np.stack([s.values for s in series])
    mean = stack.mean(axis=0)
    if len(series) > 1:
        err = stack.std(axis=0, ddof=1) / math.sqrt(len(series))
    else:
        err = np.zeros_like(mean)
    meta = dict(first.meta)
    meta["replicas"] = len(series)
    return ErrorSeries(first.abscissa, mean, first.kind, meta, stderr=err)


def w1_empirical_1d(samples_a, samples_b) -> float:
    """Exact W1 between two equal-count scalar empirical measures."""
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if len(a) == 0 or len(a) != len(b):
        raise SampleSizeError(
            f"equal nonzero sample counts required, got {len(a)} and {len(b)}; resample upstream"
        )
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def w_p_assignment(samples_a, samples_b, p: int = 1) -> float:
    """Exact empirical W_p in R^d by optimal assignment on |a_i - b_j|^p.

    Normalized as the p-th root of the mean matched cost.  The exact solver is
    cubic; counts above the cap are refused so the caller can subsample
    deliberately.
    """
    if p not in (1, 2):
        raise ValidationError(f"p must be 1 or 2, got {p}")
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise SampleSizeError(f"equal sample shapes required, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise SampleSizeError("empty samples")
    if n > ASSIGNMENT_CAP:
        raise SampleSizeError(
            f"assignment solver capped at n={ASSIGNMENT_CAP}; subsample before calling"
        )
    if a.tobytes() > b.tobytes():
        a, b = b, a  # canonical orientation makes the value exactly symmetric
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    cost = dist if p == 1 else dist**2
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / p))


def _phi(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def w1_vs_gaussian_1d(samples, mean: float, std: float) -> float:
    """Exact W1 between a scalar empirical measure and Normal(mean, std^2).

    Integrates |F_emp - Phi| in closed form between order statistics, splitting
    any interval where the Gaussian CDF crosses the empirical level.
    """
    if std <= 0:
        raise ValidationError(f"target std must be positive, got {std}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    if n < 2:
        raise SampleSizeError("need at least 2 samples")
    z = (x - mean) / std

    def g(level: float, zz: np.ndarray) -> np.ndarray:
        # antiderivative of (Phi - level)
        return zz * ndtr(zz) + _phi(zz) - level * zz

    total = float(z[0] * ndtr(z[0]) + _phi(z[0]))  # left tail: integral of Phi
    zr = z[-1]
    total += float(zr * ndtr(zr) + _phi(zr) - zr)  # right tail: integral of 1-Phi

    levels = np.arange(1, n) / n
    zl, zh = z[:-1], z[1:]
    crossings = ndtri(levels)
    below = zh <= crossings  # Phi <= level on the whole interval
    above = zl >= crossings  # Phi >= level on the whole interval
    ga, gb = g(levels, zl), g(levels, zh)
    seg = np.where(above, gb - ga, 0.0)
    seg = np.where(below, ga - gb, seg)
    split = ~(below | above)
    if np.any(split):
        gc = g(levels[split], crossings[split])
        seg[split] = ga[split] + gb[split] - 2.0 * gc
    total += float(np.sum(seg))
    return std * total


def moment_tracker(trajs, order: int = 4) -> ErrorSeries:
    """Worst-particle moment curve: max_i of the replica-mean |x^i|^order.

    Accepts one record or a sequence of coupled-shape replica records sharing
    snapshot steps.
    """
    if order not in (2, 4):
        raise ValidationError(f"order must be 2 or 4, got {order}")
    if isinstance(trajs, TrajectoryRecord):
        trajs = [trajs]
    if not trajs:
        raise SampleSizeError("no trajectories")
    steps = trajs[0].steps
    tau = trajs[0].tau
    for t in trajs[1:]:
        if t.steps != steps:
            raise CouplingError("replica records have different snapshot steps")
    values = np.empty(len(steps))
    for j, s in enumerate(steps):
        acc = None
        for t in trajs:
            x = t.positions(s)
            m = np.sum(x * x, axis=1) ** (order // 2)
            acc = m if acc is None else acc + m
        values[j] = float(np.max(acc / len(trajs)))
    times = np.asarray(steps, dtype=float) * tau
    meta = {"order": order, "replicas": len(trajs), "sup": float(values.max()) if len(values) else 0.0}
    return ErrorSeries(times, values, f"moment{order}", meta)


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line y ~ a + b x; returns (b, a, r_squared)."""
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(b), float(a), r2


def fit_order(series: ErrorSeries) -> DecayFit:
    """Log-log slope of value against abscissa (convergence order estimate)."""
    if len(series) < 3:
        raise FitError(f"order fit needs >= 3 points, got {len(series)}")
    if np.any(series.values <= 0) or np.any(series.abscissa <= 0):
        raise FitError("order fit requires positive abscissa and values")
    slope, _, r2 = _linfit(np.log(series.abscissa), np.log(series.values))
    return DecayFit(
        lambda_hat=None,
        plateau_hat=None,
        slope_hat=slope,
        r_squared=r2,
        window=(0, len(series)),
    )


def fit_decay(
    series: ErrorSeries,
    tail_fraction: float = 0.3,
    min_tail: int = 5,
    rel_floor: float = 0.05,
) -> DecayFit:
    """Two-stage fit of value(t) ~ plateau + A exp(-lambda t).

    The plateau is the mean of the tail window (last ``tail_fraction`` of the
    points, at least ``min_tail``).  The rate comes from regressing
    log(value - plateau) on t over the transient prefix where the excess stays
    above ``rel_floor`` times the initial excess; if fewer than 3 such points
    exist the transient is not resolvable and a window error is raised.
    """
    n = len(series)
    n_tail = max(min_tail, math.ceil(tail_fraction * n))
    if n < n_tail + 3:
        raise FitWindowError(f"series too short: {n} points with tail {n_tail}")
    t = series.abscissa
    v = series.values
    plateau = float(np.mean(v[n - n_tail :]))
    excess = v[: n - n_tail] - plateau
    if excess[0] <= 0:
        raise FitWindowError("no positive transient above the plateau; widen the tail")
    floor = rel_floor * excess[0]
    end = 0
    while end < len(excess) and excess[end] > floor:
        end += 1
    if end < 3:
        raise FitWindowError(
            f"transient window has {end} usable points; widen the tail or sample earlier times"
        )
    slope, _, r2 = _linfit(t[:end], np.log(excess[:end]))
    return DecayFit(
        lambda_hat=-slope,
        plateau_hat=plateau,
        slope_hat=None,
        r_squared=r2,
        window=(0, end),
    )
