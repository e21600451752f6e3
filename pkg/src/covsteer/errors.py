"""Exception types raised by the solver library."""


class CovSteerError(Exception):
    """Base class for all library errors."""


class SpecFormatError(CovSteerError):
    """A system spec file is malformed (missing/unknown field, bad value)."""


class DimensionMismatch(CovSteerError):
    """Array arguments have incompatible shapes."""


class SingularGramian(CovSteerError):
    """The input Gramian is not positive definite (system uncontrollable)."""


class SingularInitialCovariance(CovSteerError):
    """The initial covariance is singular where strict positivity is required."""


class ReducedUncontrollable(CovSteerError):
    """The selector-reduced system is uncontrollable (D Bbar row-rank deficient)."""


class InfeasibleTarget(CovSteerError):
    """Target covariance violates the solvability condition SigmaF - G_N G_N^T >= 0."""


class SingularClosedLoop(CovSteerError):
    """I + W_k Lambda is singular at some step; carries the offending index."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"closed-loop factor singular at step {step}")


class NoConvergence(CovSteerError):
    """Iterative multiplier solve exhausted its budget; carries the best residual."""

    def __init__(self, message, best_lambda=None, residual_norm=None):
        self.best_lambda = best_lambda
        self.residual_norm = residual_norm
        super().__init__(message)


class SecondOrderViolation(CovSteerError):
    """Converged multiplier fails the positivity condition for a cost minimum."""


class StepOutOfRange(CovSteerError):
    """policy_step called with an index outside 0..N or out of order."""


class IndefiniteStep(CovSteerError):
    """I + B^T P B lost positive definiteness during the backward recursion."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"indefinite input-weight factor at step {step}")


class UnsupportedProblem(CovSteerError):
    """Requested a problem combination the solver does not implement."""
