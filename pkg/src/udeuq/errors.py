"""Exception hierarchy shared across the toolkit."""


class UdeUqError(Exception):
    """Base class for toolkit errors."""


class ContractError(UdeUqError, ValueError):
    """An argument violates an operation's precondition (shape, ordering)."""


class DomainError(UdeUqError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class DegenerateStateError(DomainError):
    pass


class ConfigError(UdeUqError, ValueError):
    pass


class DataError(UdeUqError):
    pass


class SimulationError(UdeUqError, RuntimeError):
    """ODE integration or network evaluation produced non-finite values."""


class InitializationError(UdeUqError, RuntimeError):
    pass


class EmptyEnsembleError(UdeUqError, RuntimeError):
    pass


class ReportError(UdeUqError, RuntimeError):
    pass
