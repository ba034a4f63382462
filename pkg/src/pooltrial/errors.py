"""Exception types with the package's exit-code contract.

exit_code mapping used by the CLI: 1 for usage/config problems, 2 for
numerical failures (degenerate designs, singular bread matrices), 3 for
diagnostic-suite failures.
"""


class PoolTrialError(Exception):
    exit_code = 1


class ConfigError(PoolTrialError):
    """Invalid configuration, unknown labels, or misuse of an operation."""

    exit_code = 1


class DataIntegrityError(PoolTrialError):
    """Stored trajectory data violates a structural invariant."""

    exit_code = 1


class NumericalError(PoolTrialError):
    exit_code = 2


class DegenerateDesignError(NumericalError):
    """Pooled regression design is rank deficient; the replication aborts."""

    def __init__(self, message, t=None, cond=None):
        super().__init__(message)
        self.t = t
        self.cond = cond


class SingularBreadError(NumericalError):
    """The theta-block bread matrix is singular (condition number attached)."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class SingularPolicyBreadError(NumericalError):
    """A diagonal policy block of the stacked bread is singular at time t."""

    def __init__(self, message, t=None, cond=None):
        super().__init__(message)
        self.t = t
        self.cond = cond


class DiagnosticFailure(PoolTrialError):
    """A diagnostic suite reported a check violation."""

    exit_code = 3
