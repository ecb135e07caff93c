"""Exception hierarchy shared by all modules."""


class MapProError(Exception):
    pass


class ConfigurationError(MapProError, ValueError):
    """Bad user input: infeasible sizes, invalid parameters, malformed config."""


class InvariantViolation(MapProError):
    """A structural invariant (symmetry, PSD, sparsity, dual feasibility) failed."""


class InfeasibleParameters(MapProError):
    """An interval in the parameter selection chain came out empty.

    ``bound`` names the violated inequality.
    """

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class DivergenceError(MapProError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SmoothnessViolation(MapProError):
    pass


class UnsupportedDiagnostic(MapProError):
    pass


class ComparabilityError(MapProError):
    pass
