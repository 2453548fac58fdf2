"""Random-batch simulation of interacting particle systems.

Simulates overdamped interacting particle dynamics with full or random-batch
pairwise forces, couples the discrete schemes to fine-step references on a
shared Brownian path, and measures strong errors, Wasserstein sampling errors,
moment stability, and per-step cost.
"""

from .errors import (
    ConfigurationError,
    CouplingError,
    DivergenceError,
    FitError,
    FitWindowError,
    InvalidPartitionError,
    InvalidSystemError,
    ModelEvaluationError,
    RbsimError,
    SampleSizeError,
    ValidationError,
)
from .metrics import (
    DecayFit,
    ErrorSeries,
    average_series,
    fit_decay,
    fit_order,
    moment_tracker,
    strong_error,
    w1_empirical_1d,
    w1_vs_gaussian_1d,
    w_p_assignment,
)
from .model import (
    AssumptionReport,
    ForceModel,
    builtin_model,
    check_assumptions,
    eval_drift,
    pairwise_force_batched,
    pairwise_force_full,
    tau0_bound,
)
from .rng import (
    NoisePlan,
    PartitionPlan,
    derive_seed,
    make_noise_plan,
    make_partition_plan,
)
from .sim import (
    PROCESS_TAGS,
    InitialLaw,
    SystemState,
    TrajectoryRecord,
    mean_field_oracle,
    reference_ips,
    reference_rbips,
    simulate,
    step_em_batched,
    step_em_full,
)

__version__ = "0.1.0"
