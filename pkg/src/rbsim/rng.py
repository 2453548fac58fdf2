"""Reproducible randomness: dyadic Brownian increments and batch divisions.

Every draw is a pure function of (seed, address), never of call order.  Noise
uses a counter-based generator keyed per plan; the counter encodes (fine step,
particle, coordinate), so increments can be materialized for any index range,
in any order, on any process, with identical results.

Coarse increments are dyadic-tree sums of fine ones: the sum over a block is
defined as sum(left half) + sum(right half), recursively.  This makes the
consistency identity exact in floating point at every refinement level: the
level-k increment over a macro interval is bitwise equal to the sum of its two
level-(k+1) children.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, InvalidPartitionError

__all__ = [
    "NoisePlan",
    "PartitionPlan",
    "make_noise_plan",
    "make_partition_plan",
    "derive_seed",
]

# Roles keep the noise, initial-condition, and partition streams of one seed
# disjoint by construction.
ROLE_NOISE = 0
ROLE_INIT = 1
ROLE_PARTITION = 2

_U64_SHIFT = np.uint64(11)
_U64_SCALE = 2.0**-53
_U64_HALF = 2.0**-54


def philox_from(entropy) -> np.random.Philox:
    """Counter-based bit generator keyed by an int or tuple of ints."""
    key = np.random.SeedSequence(entropy).generate_state(2, np.uint64)
    return np.random.Philox(key=key)


def derive_seed(*parts) -> int:
    """Deterministic 63-bit child seed from a tuple of integer parts."""
    word = np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1, np.uint64)[0]
    return int(word >> np.uint64(1))


def _raw_block(entropy, start: int, count: int) -> np.ndarray:
    """Raw 64-bit outputs at stream positions [start, start + count).

    Philox advances its counter in blocks of four outputs, so the start is
    aligned down and the remainder discarded.
    """
    bg = philox_from(entropy)
    blocks, pad = divmod(start, 4)
    if blocks:
        bg.advance(blocks)
    return bg.random_raw(pad + count)[pad:]


def _normals(entropy, start: int, count: int) -> np.ndarray:
    """Standard normal draws at addressed stream positions via inverse CDF."""
    raw = _raw_block(entropy, start, count)
    u = (raw >> _U64_SHIFT) * _U64_SCALE + _U64_HALF
    return ndtri(u)


def _dyadic_sum(arr: np.ndarray) -> np.ndarray:
    """Tree reduction over axis 0 pairing adjacent entries; length must be 2^k."""
    while arr.shape[0] > 1:
        arr = arr[0::2] + arr[1::2]
    return arr[0]


@dataclass(frozen=True)
class NoisePlan:
    """Seeded Gaussian increment stream over a dyadic time grid.

    The horizon T is split into 2**levels fine steps of size finest_dt.  Fine
    increments are i.i.d. Normal(0, finest_dt) per (particle, coordinate, fine
    step).  A coarser level k has 2**k macro steps of size T / 2**k, each the
    dyadic-tree sum of its fine children, so the same Brownian path is seen at
    every level.
    """

    seed: int
    n_particles: int
    dim: int
    horizon: float
    levels: int

    @property
    def finest_dt(self) -> float:
        return self.horizon / (1 << self.levels)

    @property
    def n_fine(self) -> int:
        return 1 << self.levels

    def _entropy(self):
        return (int(self.seed), ROLE_NOISE)

    def fine_increments(self, f0: int, f1: int) -> np.ndarray:
        """Fine increments for step indices [f0, f1), shape (f1-f0, N, dim)."""
        if not (0 <= f0 <= f1 <= self.n_fine):
            raise IndexError(f"fine range [{f0}, {f1}) outside [0, {self.n_fine})")
        width = self.n_particles * self.dim
        z = _normals(self._entropy(), f0 * width, (f1 - f0) * width)
        return (z * np.sqrt(self.finest_dt)).reshape(f1 - f0, self.n_particles, self.dim)

    def increments(self, dt_level: int, macro_step: int) -> np.ndarray:
        """Increment over macro interval ``macro_step`` at step size T / 2**dt_level."""
        block = self.increments_range(dt_level, macro_step, macro_step + 1)
        return block[0]

    def increments_range(self, dt_level: int, m0: int, m1: int) -> np.ndarray:
        """Increments for macro steps [m0, m1) at ``dt_level``, shape (m1-m0, N, dim)."""
        if not (0 <= dt_level <= self.levels):
            raise IndexError(f"dt_level {dt_level} outside [0, {self.levels}]")
        n_macro = 1 << dt_level
        if not (0 <= m0 <= m1 <= n_macro):
            raise IndexError(f"macro range [{m0}, {m1}) outside [0, {n_macro})")
        span = 1 << (self.levels - dt_level)
        fine = self.fine_increments(m0 * span, m1 * span)
        if span == 1:
            return fine
        shaped = fine.reshape(m1 - m0, span, self.n_particles, self.dim)
        return _dyadic_sum(np.moveaxis(shaped, 1, 0))


def make_noise_plan(seed: int, n_particles: int, dim: int, horizon: float, levels: int) -> NoisePlan:
    """Create a noise plan; validates sizes and the counter address space."""
    if horizon <= 0:
        raise ConfigurationError(f"horizon must be positive, got {horizon}")
    if levels < 0:
        raise ConfigurationError(f"levels must be >= 0, got {levels}")
    if n_particles < 1 or dim < 1:
        raise ConfigurationError("n_particles and dim must be >= 1")
    if (n_particles * dim) << levels >= 1 << 62:
        raise ConfigurationError("noise address space overflow; reduce levels or system size")
    return NoisePlan(int(seed), int(n_particles), int(dim), float(horizon), int(levels))


@dataclass(frozen=True)
class PartitionPlan:
    """Per-step random equal-size batch divisions, independent across steps.

    Each step's division is a seeded uniform shuffle of {0..N-1} chunked into
    q = N/p consecutive blocks.  The shuffle is the argsort of N uniforms at
    counters [step*N, (step+1)*N), so divisions at distinct steps are
    independent and addressable out of order or in bulk.
    """

    seed: int
    n_particles: int
    batch_size: int
    n_steps: int

    @property
    def n_batches(self) -> int:
        return self.n_particles // self.batch_size

    def division(self, step: int) -> np.ndarray:
        """Division used on macro step ``step``, as a (q, p) index array."""
        return self.divisions_range(step, step + 1)[0]

    def divisions_range(self, m0: int, m1: int) -> np.ndarray:
        """Divisions for steps [m0, m1), shape (m1-m0, q, p)."""
        if not (0 <= m0 <= m1 <= self.n_steps):
            raise IndexError(f"step range [{m0}, {m1}) outside [0, {self.n_steps})")
        n = self.n_particles
        raw = _raw_block((int(self.seed), ROLE_PARTITION), m0 * n, (m1 - m0) * n)
        keys = raw.reshape(m1 - m0, n)
        perms = np.argsort(keys, axis=1, kind="stable")
        return perms.reshape(m1 - m0, self.n_batches, self.batch_size)


def make_partition_plan(seed: int, n_particles: int, batch_size: int, n_steps: int) -> PartitionPlan:
    """Create a partition plan; batch size must be >= 2 and divide N."""
    if batch_size < 2:
        raise InvalidPartitionError(f"batch size must be >= 2, got {batch_size}")
    if n_particles % batch_size != 0:
        raise InvalidPartitionError(
            f"batch size {batch_size} does not divide {n_particles} particles"
        )
    if n_steps < 0:
        raise ConfigurationError(f"n_steps must be >= 0, got {n_steps}")
    return PartitionPlan(int(seed), int(n_particles), int(batch_size), int(n_steps))


def initial_state_generator(seed: int) -> np.random.Generator:
    """Generator for sampling the initial law tied to a plan seed."""
    return np.random.Generator(philox_from((int(seed), ROLE_INIT)))
