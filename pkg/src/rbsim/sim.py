"""Coupled Euler-Maruyama integrators for full and random-batch dynamics.

Five processes share one stepping engine:

  discrete_ips      EM at the macro step with all-pair interactions
  discrete_rbips    EM at the macro step, interactions inside random batches
  reference_ips     EM at a dyadically refined step on the same Brownian path
  reference_rbips   refined EM with the batch division frozen per macro step
  mean_field_oracle large-N full-interaction run standing in for the
                    mean-field law

Runs built from one NoisePlan (and one PartitionPlan where batched) are
synchronously coupled: same initial state, same Brownian path at every
refinement level, same divisions.  With refine_levels=0 a reference run takes
bitwise the same steps as the corresponding discrete run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError, InvalidSystemError, ModelEvaluationError
from .model import ForceModel, eval_drift, pairwise_force_batched, pairwise_force_full
from .rng import NoisePlan, PartitionPlan, initial_state_generator, make_noise_plan

__all__ = [
    "PROCESS_TAGS",
    "SystemState",
    "TrajectoryRecord",
    "InitialLaw",
    "step_em_full",
    "step_em_batched",
    "simulate",
    "reference_ips",
    "reference_rbips",
    "mean_field_oracle",
]

PROCESS_TAGS = (
    "discrete_ips",
    "discrete_rbips",
    "reference_ips",
    "reference_rbips",
    "mean_field_oracle",
)
_BATCHED_TAGS = ("discrete_rbips", "reference_rbips")

# Upper bound on prefetched fine increments per engine chunk (elements).
_PREFETCH_ELEMS = 1 << 19


@dataclass
class SystemState:
    """Positions of N particles at a macro step index."""

    positions: np.ndarray  # (N, dim)
    step_index: int
    time: float


@dataclass
class TrajectoryRecord:
    """Snapshots of one process at macro times, plus its coupling fingerprint."""

    process_tag: str
    snapshots: dict[int, SystemState]
    tau: float
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> tuple[int, ...]:
        return tuple(sorted(self.snapshots))

    def positions(self, step: int) -> np.ndarray:
        return self.snapshots[step].positions

    @property
    def n_particles(self) -> int:
        return int(self.meta["n_particles"])

    @property
    def dim(self) -> int:
        return int(self.meta["dim"])


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution of each particle: point mass, Gaussian, or box.

    ``scale`` is the standard deviation for the Gaussian and the half-width
    for the uniform box; it is ignored for the point mass at the origin.
    """

    kind: str = "dirac"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dirac", "gaussian", "uniform"):
            raise ConfigurationError(f"unknown initial law {self.kind!r}")
        if self.kind != "dirac" and self.scale <= 0:
            raise ConfigurationError("initial law scale must be positive")

    def sample(self, n: int, dim: int, seed: int) -> np.ndarray:
        if self.kind == "dirac":
            return np.zeros((n, dim))
        gen = initial_state_generator(seed)
        if self.kind == "gaussian":
            return self.scale * gen.standard_normal((n, dim))
        return gen.uniform(-self.scale, self.scale, size=(n, dim))

    def moments(self, dim: int) -> tuple[float, float]:
        """(M2, M4) = (E|x|^2, E|x|^4) of a single particle under this law."""
        if self.kind == "dirac":
            return 0.0, 0.0
        s2 = self.scale * self.scale
        if self.kind == "gaussian":
            return dim * s2, dim * (dim + 2) * s2 * s2
        m2 = dim * s2 / 3.0
        m4 = dim * s2 * s2 / 5.0 + dim * (dim - 1) * s2 * s2 / 9.0
        return m2, m4


def _check_step_inputs(state: SystemState, model: ForceModel, tau: float, dw: np.ndarray) -> np.ndarray:
    if tau < 0:
        raise ConfigurationError(f"tau must be >= 0, got {tau}")
    dw = np.asarray(dw, dtype=float)
    if dw.shape != state.positions.shape:
        raise InvalidSystemError(f"dW shape {dw.shape} != positions shape {state.positions.shape}")
    return dw


def _advance(state: SystemState, tau: float, positions: np.ndarray) -> SystemState:
    if not np.all(np.isfinite(positions)):
        raise DivergenceError(state.step_index + 1)
    return SystemState(positions, state.step_index + 1, (state.step_index + 1) * tau)


def step_em_full(state: SystemState, model: ForceModel, tau: float, dw) -> SystemState:
    """One EM step with all-pair interactions."""
    dw = _check_step_inputs(state, model, tau, dw)
    forces = pairwise_force_full(model, state.positions)
    with np.errstate(over="ignore", invalid="ignore"):
        return _advance(state, tau, state.positions + forces * tau + model.sigma * dw)


def step_em_batched(state: SystemState, model: ForceModel, tau: float, dw, division) -> SystemState:
    """One EM step with interactions restricted to the given division."""
    dw = _check_step_inputs(state, model, tau, dw)
    forces = pairwise_force_batched(model, state.positions, division)
    with np.errstate(over="ignore", invalid="ignore"):
        return _advance(state, tau, state.positions + forces * tau + model.sigma * dw)


def _macro_level(noise: NoisePlan, tau: float) -> int:
    """Dyadic level k with tau = horizon / 2**k, or raise."""
    ratio = noise.horizon / tau
    k = round(math.log2(ratio))
    if k < 0 or abs(ratio - (1 << max(k, 0))) > 1e-9 * ratio:
        raise ConfigurationError(
            f"tau {tau} is not a dyadic fraction of the noise horizon {noise.horizon}"
        )
    return k


def _fingerprint_meta(model, noise, tau, n_steps, process_tag, refine_levels, partitions, initial_law, snapshot_every):
    m2, m4 = initial_law.moments(model.dim)
    return {
        "process_tag": process_tag,
        "n_particles": noise.n_particles,
        "dim": model.dim,
        "tau": tau,
        "n_steps": n_steps,
        "refine_levels": refine_levels,
        "snapshot_every": snapshot_every,
        "noise_seed": noise.seed,
        "partition_seed": None if partitions is None else partitions.seed,
        "batch_size": None if partitions is None else partitions.batch_size,
        "initial_law": initial_law.kind,
        "initial_scale": initial_law.scale,
        "initial_m2": m2,
        "initial_m4": m4,
        **model.fingerprint_fields(),
    }


def _forces(model: ForceModel, positions: np.ndarray, division, fast_full: bool) -> np.ndarray:
    if division is not None:
        return pairwise_force_batched(model, positions, division)
    if fast_full and model.kernel_pair_mean is not None:
        return eval_drift(model, positions) + model.kernel_pair_mean(positions)
    return pairwise_force_full(model, positions)


def _run(
    model: ForceModel,
    noise: NoisePlan,
    tau: float,
    n_steps: int,
    *,
    process_tag: str,
    partitions: PartitionPlan | None = None,
    refine_levels: int = 0,
    snapshot_every: int = 1,
    snapshot_steps=None,
    initial_law: InitialLaw | None = None,
    fast_full: bool = False,
) -> TrajectoryRecord:
    if process_tag not in PROCESS_TAGS:
        raise ConfigurationError(f"unknown process tag {process_tag!r}")
    batched = process_tag in _BATCHED_TAGS
    if batched and partitions is None:
        raise ConfigurationError(f"{process_tag} requires a partition plan")
    if not batched and partitions is not None:
        raise ConfigurationError(f"{process_tag} does not accept a partition plan")
    if n_steps < 0:
        raise ConfigurationError("n_steps must be >= 0")
    if snapshot_every < 1:
        raise ConfigurationError("snapshot_every must be >= 1")
    if refine_levels < 0:
        raise ConfigurationError("refine_levels must be >= 0")
    initial_law = initial_law or InitialLaw()

    k = _macro_level(noise, tau)
    fine_level = k + refine_levels
    if fine_level > noise.levels:
        raise ConfigurationError(
            f"refine_levels {refine_levels} exceeds the noise plan resolution "
            f"(needs level {fine_level}, plan has {noise.levels})"
        )
    if n_steps > (1 << k):
        raise ConfigurationError(
            f"noise horizon {noise.horizon} covers only {1 << k} steps of tau {tau}"
        )
    if batched:
        if partitions.n_particles != noise.n_particles:
            raise ConfigurationError("partition plan particle count differs from noise plan")
        if partitions.n_steps < n_steps:
            raise ConfigurationError("partition plan covers fewer steps than requested")

    sub = 1 << refine_levels
    tau_fine = tau / sub
    positions = initial_law.sample(noise.n_particles, model.dim, noise.seed)
    meta = _fingerprint_meta(
        model, noise, tau, n_steps, process_tag, refine_levels, partitions, initial_law, snapshot_every
    )
    wanted = None if snapshot_steps is None else frozenset(int(s) for s in snapshot_steps)
    snapshots = {0: SystemState(positions.copy(), 0, 0.0)}

    chunk = max(1, _PREFETCH_ELEMS // max(1, sub * noise.n_particles * noise.dim))
    sigma = model.sigma
    # Overflow on the way to a detected divergence is expected; the finite
    # check below is the handler.
    with np.errstate(over="ignore", invalid="ignore"):
        for n0 in range(0, n_steps, chunk):
            n1 = min(n_steps, n0 + chunk)
            dw = noise.increments_range(fine_level, n0 * sub, n1 * sub)
            divisions = partitions.divisions_range(n0, n1) if batched else None
            for n in range(n0, n1):
                division = divisions[n - n0] if batched else None
                for s in range(sub):
                    try:
                        forces = _forces(model, positions, division, fast_full)
                    except ModelEvaluationError as exc:
                        raise DivergenceError(
                            n + 1, f"force evaluation became non-finite at step {n + 1}: {exc}"
                        ) from None
                    positions = positions + forces * tau_fine + sigma * dw[(n - n0) * sub + s]
                    if not np.all(np.isfinite(positions)):
                        raise DivergenceError(n + 1)
                record = (
                    (n + 1) in wanted
                    if wanted is not None
                    else ((n + 1) % snapshot_every == 0 or (n + 1) == n_steps)
                )
                if record:
                    snapshots[n + 1] = SystemState(positions.copy(), n + 1, (n + 1) * tau)
    return TrajectoryRecord(process_tag, snapshots, tau, meta)


def simulate(
    process_tag: str,
    model: ForceModel,
    n_particles: int,
    batch_size: int | None,
    tau: float,
    n_steps: int,
    noise: NoisePlan,
    partitions: PartitionPlan | None = None,
    snapshot_every: int = 1,
    snapshot_steps=None,
    initial_law: InitialLaw | None = None,
) -> TrajectoryRecord:
    """Run a discrete process at the macro step; deterministic given the plans."""
    if process_tag not in ("discrete_ips", "discrete_rbips"):
        raise ConfigurationError("simulate runs discrete_ips or discrete_rbips; use the reference helpers otherwise")
    if noise.n_particles != n_particles or noise.dim != model.dim:
        raise ConfigurationError("noise plan shape differs from the requested system")
    if partitions is not None and batch_size is not None and partitions.batch_size != batch_size:
        raise ConfigurationError("partition plan batch size differs from requested batch size")
    return _run(
        model,
        noise,
        tau,
        n_steps,
        process_tag=process_tag,
        partitions=partitions,
        snapshot_every=snapshot_every,
        snapshot_steps=snapshot_steps,
        initial_law=initial_law,
    )


def reference_ips(
    model: ForceModel,
    n_particles: int,
    tau: float,
    n_steps: int,
    noise: NoisePlan,
    refine_levels: int,
    snapshot_every: int = 1,
    initial_law: InitialLaw | None = None,
) -> TrajectoryRecord:
    """Fine-step oracle for the full dynamics on the same Brownian path.

    Integrates at step tau / 2**refine_levels and snapshots at macro times;
    refine_levels=0 reproduces the discrete scheme bitwise.
    """
    if noise.n_particles != n_particles or noise.dim != model.dim:
        raise ConfigurationError("noise plan shape differs from the requested system")
    return _run(
        model,
        noise,
        tau,
        n_steps,
        process_tag="reference_ips",
        refine_levels=refine_levels,
        snapshot_every=snapshot_every,
        initial_law=initial_law,
    )


def reference_rbips(
    model: ForceModel,
    n_particles: int,
    batch_size: int,
    tau: float,
    n_steps: int,
    noise: NoisePlan,
    partitions: PartitionPlan,
    refine_levels: int,
    snapshot_every: int = 1,
    initial_law: InitialLaw | None = None,
) -> TrajectoryRecord:
    """Fine-step oracle for the batched dynamics; divisions frozen per macro step."""
    if noise.n_particles != n_particles or noise.dim != model.dim:
        raise ConfigurationError("noise plan shape differs from the requested system")
    if partitions.batch_size != batch_size:
        raise ConfigurationError("partition plan batch size differs from requested batch size")
    return _run(
        model,
        noise,
        tau,
        n_steps,
        process_tag="reference_rbips",
        partitions=partitions,
        refine_levels=refine_levels,
        snapshot_every=snapshot_every,
        initial_law=initial_law,
    )


def mean_field_oracle(
    model: ForceModel,
    n_ref: int,
    tau_fine: float,
    n_steps: int,
    seed: int,
    snapshot_every: int | None = None,
    initial_law: InitialLaw | None = None,
) -> TrajectoryRecord:
    """Large-N full-interaction run whose empirical law stands in for the
    mean-field law at each time (and, late, for its invariant distribution).

    Uses the model's exact fast interaction path when available; otherwise the
    generic quadratic one.
    """
    if n_ref < 2:
        raise InvalidSystemError("mean-field reference needs at least 2 particles")
    if tau_fine <= 0:
        raise ConfigurationError("tau_fine must be positive")
    levels = max(0, math.ceil(math.log2(max(1, n_steps))))
    noise = make_noise_plan(seed, n_ref, model.dim, tau_fine * (1 << levels), levels)
    if snapshot_every is None:
        snapshot_every = max(1, n_steps // 64)
    return _run(
        model,
        noise,
        tau_fine,
        n_steps,
        process_tag="mean_field_oracle",
        snapshot_every=snapshot_every,
        initial_law=initial_law,
        fast_full=True,
    )
