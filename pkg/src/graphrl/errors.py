"""Exception hierarchy shared by every module."""


class GraphRLError(Exception):
    pass


class DimensionError(GraphRLError, ValueError):
    pass


class ConfigError(GraphRLError, ValueError):
    pass


class ValidationError(GraphRLError, ValueError):
    pass


class DomainError(GraphRLError, ValueError):
    pass


class ContractError(GraphRLError, RuntimeError):
    pass


class TrainingError(GraphRLError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class NumericError(GraphRLError, ArithmeticError):
    pass


class TuningError(GraphRLError, RuntimeError):
    pass
