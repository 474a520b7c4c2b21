"""Exception types raised by the toolkit."""


class BTestError(Exception):
    """Base class for all toolkit errors."""


class ParseError(BTestError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyInput(BTestError, ValueError):
    pass


class TooFewSamples(BTestError, ValueError):
    pass


class DimError(BTestError, ValueError):
    pass


class DegenerateData(BTestError, ValueError):
    pass


class BlockTooSmall(BTestError, ValueError):
    pass


class ConfigError(BTestError, ValueError):
    pass


class TooFewBlocks(BTestError, ValueError):
    pass


class DegenerateVariance(BTestError, ValueError):
    pass


class ResourceLimit(BTestError, RuntimeError):
    pass


class NumericalError(BTestError, ArithmeticError):
    pass


class FitError(BTestError, ValueError):
    pass


class SelectionError(BTestError, ValueError):
    pass


class BudgetExceeded(BTestError, RuntimeError):
    """Sample-complexity search hit its n cap before meeting the target."""

    def __init__(self, message, largest_n):
        super().__init__(message)
        self.largest_n = largest_n
