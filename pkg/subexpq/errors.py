"""Exception hierarchy. Every error knows the exit status the CLI reports."""


class SubexpqError(Exception):
    exit_code = 1


class ModelValidationError(SubexpqError):
    """
    The model (or one of its components) violates a structural assumption.
    """

    exit_code = 2


class DistributionError(ModelValidationError):
    pass


class StochasticityError(ModelValidationError):
    pass


class ReducibleChainError(ModelValidationError):
    pass


class UnstableChainError(ModelValidationError):
    pass


class AssumptionError(ModelValidationError):
    """
    Raised when the tail hypotheses needed by an asymptote cannot hold, or
    when a regime is selected without the inputs it needs.
    """


class ConvergenceError(SubexpqError):
    """
    A numerical procedure hit its cap, or a residual check failed.
    """

    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class HorizonError(ConvergenceError):
    """
    A quantity was requested beyond the horizon a truncated representation
    can answer exactly.
    """


class UnwritableDestinationError(SubexpqError):
    exit_code = 73


EXIT_USAGE = 64
