"""Force models: drift, pairwise interaction kernel, and assumption checks.

A model bundles the drift force b, the interaction kernel K, the diffusion
coefficient sigma, and the regularity/dissipation constants it claims to
satisfy.  Constants are declared inputs; the library verifies them on sample
grids, it never derives them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigurationError,
    InvalidPartitionError,
    InvalidSystemError,
    ModelEvaluationError,
)

__all__ = [
    "ForceModel",
    "AssumptionReport",
    "builtin_model",
    "eval_drift",
    "pairwise_force_full",
    "pairwise_force_batched",
    "interaction_mean_full",
    "check_assumptions",
    "tau0_bound",
]

# Cap on elements per temporary pair tensor; keeps peak memory of the
# O(N^2) path near 48 MB regardless of N.
_PAIR_CHUNK_ELEMS = 2 << 20


@dataclass(frozen=True)
class ForceModel:
    """Drift b, kernel K, diffusion sigma, and declared constants.

    ``drift`` and ``kernel`` map arrays of shape (..., dim) to the same shape,
    vectorized over leading axes.  ``kernel=None`` means K is identically zero
    and kernel evaluation is skipped entirely.

    ``kernel_pair_mean``, when set, must compute (1/(N-1)) * sum_{j != i}
    K(x_i - x_j) for positions of shape (N, dim) exactly (up to rounding) but
    possibly in o(N^2) work.  It is used only by the large-N mean-field
    reference; the generic force paths below keep their stated complexity.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    kernel: Optional[Callable[[np.ndarray], np.ndarray]]
    sigma: float
    dim: int
    declared_l0: float
    declared_l1: float
    declared_alpha: float
    declared_theta: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    kernel_pair_mean: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        for nm in ("declared_l0", "declared_l1", "declared_alpha"):
            if getattr(self, nm) < 0:
                raise ConfigurationError(f"{nm} must be nonnegative")

    @property
    def tau0(self) -> float:
        return tau0_bound(self.declared_alpha, self.declared_l0)

    def fingerprint_fields(self) -> dict:
        return {"model": self.name, "params": dict(self.params), "sigma": self.sigma, "dim": self.dim}


@dataclass(frozen=True)
class AssumptionReport:
    """Result of the numerical assumption scan.

    ``kappa_samples`` holds (separation r, lower bound of the drift
    contraction quotient at that separation) pairs; the quotient is
    -(2/sigma^2) (x-y).(b(x)-b(y)) / |x-y|^2 probed over grid pairs.
    """

    l0_ok: bool
    l1_ok: bool
    dissipation_ok: bool
    kappa_samples: tuple[tuple[float, float], ...]
    kappa_asymptotically_positive: bool
    tau0: float

    @property
    def all_ok(self) -> bool:
        return bool(
            self.l0_ok and self.l1_ok and self.dissipation_ok and self.kappa_asymptotically_positive
        )


def tau0_bound(alpha: float, l0: float) -> float:
    """Stability threshold min{alpha/(2 L0^2), 1/(2 alpha)} for the time step."""
    if alpha <= 0 or l0 <= 0:
        raise ConfigurationError("tau0 requires alpha > 0 and L0 > 0")
    return min(alpha / (2.0 * l0 * l0), 1.0 / (2.0 * alpha))


def builtin_model(
    family: str = "ou_sine",
    alpha: float = 1.0,
    eps: float = 0.1,
    sigma: float = math.sqrt(2.0),
    dim: int = 1,
) -> ForceModel:
    """Construct a builtin model.

    Families:
      * ``ou``       linear drift b(x) = -alpha x, no interaction.
      * ``ou_sine``  linear drift plus bounded componentwise kernel
                     K(r) = eps * sin(r).

    The linear drift satisfies the growth bound with L0 = alpha and the
    dissipation bound -x.b(x) = alpha |x|^2 with any positive slack theta.
    The sine kernel is bounded by eps per component, so |K| <= eps*sqrt(dim),
    with first and second derivatives bounded by eps.
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    if family not in ("ou", "ou_sine"):
        raise ConfigurationError(f"unknown model family {family!r}")
    if family == "ou" or eps == 0.0:
        family = "ou"
        kernel = None
        pair_mean = None
        l1 = 0.0
    else:
        if eps < 0:
            raise ConfigurationError("eps must be nonnegative")

        def kernel(r, _e=eps):
            return _e * np.sin(r)

        def pair_mean(x, _e=eps):
            return interaction_mean_sine(x, _e)

        l1 = eps * math.sqrt(dim)

    def drift(x, _a=alpha):
        return -_a * x

    return ForceModel(
        drift=drift,
        kernel=kernel,
        sigma=float(sigma),
        dim=int(dim),
        declared_l0=alpha,
        declared_l1=l1,
        declared_alpha=alpha,
        declared_theta=1e-9,
        name=family,
        params={"alpha": alpha, "eps": 0.0 if kernel is None else eps, "sigma": float(sigma), "dim": dim},
        kernel_pair_mean=pair_mean,
    )


def eval_drift(model: ForceModel, x) -> np.ndarray:
    """Evaluate the drift force b(x)."""
    x = np.asarray(x, dtype=float)
    out = np.asarray(model.drift(x), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError("drift returned non-finite values")
    return out


def interaction_mean_sine(positions: np.ndarray, eps: float) -> np.ndarray:
    """Exact O(N) evaluation of the averaged sine interaction.

    Uses sin(a-b) = sin a cos b - cos a sin b componentwise, so the j-sum
    collapses to two running totals.  sin(0) = 0 makes the j = i exclusion
    free.
    """
    n = positions.shape[-2]
    s = np.sin(positions)
    c = np.cos(positions)
    s_tot = s.sum(axis=-2, keepdims=True)
    c_tot = c.sum(axis=-2, keepdims=True)
    return eps * (s * (c_tot - c) - c * (s_tot - s)) / (n - 1)


def interaction_mean_full(model: ForceModel, positions: np.ndarray) -> np.ndarray:
    """Averaged interaction (1/(N-1)) sum_{j != i} K(x_i - x_j), Theta(N^2 d).

    Kernel terms for each i are reduced over j in ascending index order by a
    single fixed-order vectorized sum, so any two call paths that assemble the
    same term sequence agree bitwise.
    """
    n, d = positions.shape
    if model.kernel is None:
        return np.zeros_like(positions)
    out = np.empty_like(positions)
    chunk = max(1, _PAIR_CHUNK_ELEMS // (n * d))
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        diff = positions[i0:i1, None, :] - positions[None, :, :]
        terms = np.asarray(model.kernel(diff), dtype=float)
        idx = np.arange(i0, i1)
        terms[idx - i0, idx, :] = 0.0
        out[i0:i1] = terms.sum(axis=1)
    return out / (n - 1)


def pairwise_force_full(model: ForceModel, positions: np.ndarray) -> np.ndarray:
    """Per-particle total force b(x_i) + averaged interaction, all pairs."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != model.dim:
        raise InvalidSystemError(f"positions must have shape (N, {model.dim})")
    n = positions.shape[0]
    if n < 2:
        raise InvalidSystemError(f"need at least 2 particles, got {n}")
    forces = eval_drift(model, positions)
    if model.kernel is not None:
        forces = forces + interaction_mean_full(model, positions)
    if not np.all(np.isfinite(forces)):
        raise ModelEvaluationError("force evaluation returned non-finite values")
    return forces


def _validated_batches(batches, n: int) -> np.ndarray:
    """Return batches as a (q, p) int array with members sorted ascending."""
    try:
        arr = np.asarray(batches, dtype=np.intp)
    except ValueError as exc:
        raise InvalidPartitionError(f"batches have unequal sizes: {exc}") from None
    if arr.ndim != 2:
        raise InvalidPartitionError("batches must be a sequence of equal-size index sets")
    idx = np.sort(arr, axis=1)
    q, p = idx.shape
    if p < 2:
        raise InvalidPartitionError(f"batch size must be >= 2, got {p}")
    if q * p != n:
        raise InvalidPartitionError(f"{q} batches of size {p} do not cover {n} indices")
    counts = np.bincount(idx.ravel(), minlength=n)
    if idx.min() < 0 or idx.max() >= n or not np.all(counts == 1):
        raise InvalidPartitionError("batches are not a partition of the index set")
    return idx


def pairwise_force_batched(model: ForceModel, positions: np.ndarray, batches) -> np.ndarray:
    """Per-particle total force with interactions restricted to batches.

    ``batches`` is one division: q index sets of equal size p >= 2 partitioning
    {0..N-1}.  Interaction cost is Theta(N p d).  Batch members are summed in
    ascending index order with the same reduction as the full path, so a single
    batch of size N reproduces the full force.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != model.dim:
        raise InvalidSystemError(f"positions must have shape (N, {model.dim})")
    n, d = positions.shape
    if n < 2:
        raise InvalidSystemError(f"need at least 2 particles, got {n}")
    idx = _validated_batches(batches, n)
    q, p = idx.shape
    forces = eval_drift(model, positions)
    if model.kernel is None:
        return forces
    grouped = positions[idx]  # (q, p, d)
    diff = grouped[:, :, None, :] - grouped[:, None, :, :]
    terms = np.asarray(model.kernel(diff), dtype=float)
    j = np.arange(p)
    terms[:, j, j, :] = 0.0
    gamma = terms.sum(axis=2) / (p - 1)  # (q, p, d)
    scattered = np.empty_like(positions)
    scattered[idx.reshape(-1)] = gamma.reshape(n, d)
    forces = forces + scattered
    if not np.all(np.isfinite(forces)):
        raise ModelEvaluationError("force evaluation returned non-finite values")
    return forces


def _grid_points(radius: float, grid_points: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic radii and unit directions covering the ball of ``radius``."""
    radii = np.linspace(radius / grid_points, radius, grid_points)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        angles = np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)
        dirs = np.zeros((len(angles), dim))
        dirs[:, 0] = np.cos(angles)
        dirs[:, 1] = np.sin(angles)
    return radii, dirs


def check_assumptions(model: ForceModel, grid_radius: float = 10.0, grid_points: int = 64) -> AssumptionReport:
    """Spot-check the declared constants on a deterministic grid.

    The growth, boundedness, and dissipation inequalities are evaluated at
    every grid point; the drift contraction function is probed on pairs
    (r u, 0) and (r u, -r u) over unit directions u.  This is a sampled lower
    bound, not a proof.
    """
    if grid_points < 2:
        raise ConfigurationError("grid_points must be >= 2")
    if grid_radius <= 0:
        raise ConfigurationError("grid_radius must be positive")
    radii, dirs = _grid_points(grid_radius, grid_points, model.dim)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, model.dim)
    pts = np.concatenate([np.zeros((1, model.dim)), pts], axis=0)
    tol = 1e-9

    b = eval_drift(model, pts)
    norm_x = np.linalg.norm(pts, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    l0_ok = bool(np.all(norm_b <= model.declared_l0 * (norm_x + 1.0) + tol))

    if model.kernel is None:
        l1_ok = True
    else:
        k = np.asarray(model.kernel(pts), dtype=float)
        l1_ok = bool(np.all(np.linalg.norm(k, axis=1) <= model.declared_l1 + tol))

    dots = np.einsum("ij,ij->i", pts, b)
    dissipation_ok = bool(
        np.all(-dots >= model.declared_alpha * norm_x**2 - model.declared_theta - tol)
    )

    samples: dict[float, float] = {}
    for u in dirs:
        x = radii[:, None] * u[None, :]
        for y, sep in ((np.zeros_like(x), radii), (-x, 2.0 * radii)):
            bx = eval_drift(model, x)
            by = eval_drift(model, y)
            dxy = x - y
            r2 = np.einsum("ij,ij->i", dxy, dxy)
            quot = -(2.0 / model.sigma**2) * np.einsum("ij,ij->i", dxy, bx - by) / r2
            for s, qv in zip(sep, quot):
                key = float(s)
                samples[key] = min(samples.get(key, math.inf), float(qv))
    kappa_samples = tuple(sorted(samples.items()))
    rs = np.array([r for r, _ in kappa_samples])
    ks = np.array([kv for _, kv in kappa_samples])
    tail = rs >= np.median(rs)
    kappa_pos = bool(np.all(ks[tail] > 0.0))

    return AssumptionReport(
        l0_ok=l0_ok,
        l1_ok=l1_ok,
        dissipation_ok=dissipation_ok,
        kappa_samples=kappa_samples,
        kappa_asymptotically_positive=kappa_pos,
        tau0=model.tau0,
    )
