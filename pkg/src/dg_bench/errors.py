"""Exception hierarchy shared by all dg_bench modules."""


class DGBenchError(Exception):
    """Base class for toolkit errors."""


class ValidationError(DGBenchError, ValueError):
    """An object failed its construction invariants."""


class CsvFormatError(DGBenchError, ValueError):
    """A CSV file could not be ingested."""


class MissingLabelColumn(CsvFormatError):
    pass


class NonNumericFeature(CsvFormatError):
    pass


class EmptyFile(CsvFormatError):
    pass


class DuplicatePointsError(DGBenchError, ValueError):
    """Interpolating kernel solve requested on a train set with repeated points."""


class SingularSystemError(DGBenchError, ArithmeticError):
    """Kernel system could not be solved to the required residual."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EnumerationBudgetError(DGBenchError, RuntimeError):
    pass


class TheoremViolation(DGBenchError, AssertionError):
    """An exact oracle found a bound violated; the implementation is wrong."""


class ConfigError(DGBenchError, ValueError):
    """Invalid experiment configuration. ``path`` points at the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message
