"""Exception hierarchy shared by all modules."""


class FuzzySchedError(Exception):
    """Base class for every error raised by this package."""


class ParseError(FuzzySchedError):
    """A graph or rule-base document could not be decoded."""


class ValidationError(FuzzySchedError):
    """A decoded object violates a structural invariant (cycle, dangling edge, ...)."""


class ConfigError(FuzzySchedError):
    """Inconsistent or incomplete configuration."""


class InstabilityError(FuzzySchedError):
    """Thermal decay constant is not positive; leakage outruns conductance."""


class DomainError(FuzzySchedError):
    """A reliability model was evaluated outside its validity range."""


class EmptyScheduleError(FuzzySchedError):
    """GSFR requested for a schedule in which nothing executed."""


class NoRuleFiredError(FuzzySchedError):
    """Every rule had zero firing strength for an input."""


class StatsEmptyError(FuzzySchedError):
    """Firing statistics were queried before any inference ran."""


class UncoolableError(FuzzySchedError):
    """Idling a core cannot bring its temperature below the threshold."""


class EvaluationError(FuzzySchedError):
    """Fitness evaluation failed; carries the genes needed to replay it."""

    def __init__(self, message, genes=None):
        super().__init__(message)
        self.genes = genes
