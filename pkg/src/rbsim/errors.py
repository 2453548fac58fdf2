"""Exception types shared across the package."""


class RbsimError(Exception):
    """Base class for all rbsim errors."""


class ModelEvaluationError(RbsimError):
    """A force evaluation produced a non-finite value."""


class InvalidSystemError(RbsimError):
    """System shape violates a precondition (e.g. fewer than 2 particles)."""


class InvalidPartitionError(RbsimError):
    """Batch division is not an equal-size partition of the index set."""


class ConfigurationError(RbsimError):
    """Invalid configuration value or inconsistent run setup."""


class DivergenceError(RbsimError):
    """A trajectory left the finite domain.

    Carries the macro step index at which the blow-up was detected.
    """

    def __init__(self, step_index: int, message: str = ""):
        self.step_index = step_index
        super().__init__(message or f"non-finite positions at step {step_index}")


class CouplingError(RbsimError):
    """Trajectories are not synchronously coupled; pathwise error undefined."""


class SampleSizeError(RbsimError):
    """Sample counts violate an estimator precondition."""


class ValidationError(RbsimError):
    """Estimator input fails validation (e.g. degenerate target)."""


class FitError(RbsimError):
    """Regression preconditions not met (too few points, nonpositive values)."""


class FitWindowError(FitError):
    """Decay fit could not isolate a positive transient above the plateau."""
