"""Exception hierarchy shared by all modules."""


class RelaxedMpcError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(RelaxedMpcError, ValueError):
    pass


class NonStabilizable(RelaxedMpcError):
    pass


class NotControllable(RelaxedMpcError):
    pass


class RankDeficient(RelaxedMpcError):
    pass


class Unstable(RelaxedMpcError):
    pass


class Infeasible(RelaxedMpcError):
    pass


class DomainViolation(RelaxedMpcError, ValueError):
    pass


class WrongRelaxing(RelaxedMpcError, ValueError):
    pass


class StrategyError(RelaxedMpcError, ValueError):
    """A terminal strategy was requested whose preconditions do not hold."""


class SolverFailure(RelaxedMpcError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MaxIterations(SolverFailure):
    pass


class DomainEscape(SolverFailure):
    pass


class NoRoot(RelaxedMpcError):
    pass


class NotTerminated(RelaxedMpcError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(RelaxedMpcError, ValueError):
    pass
