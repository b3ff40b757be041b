"""Exception hierarchy shared by every module."""


class GsliError(Exception):
    """Base class for all package errors."""


class ParseError(GsliError, ValueError):
    pass


class StructureError(GsliError, ValueError):
    """Input is well-formed but violates a structural requirement (e.g. irregular time grid)."""


class ConsistencyError(GsliError, ValueError):
    pass


class DegenerateError(GsliError, ValueError):
    """Geometry or feature statistics make the requested transform undefined."""


class ParameterError(GsliError, ValueError):
    pass


class ShapeError(GsliError, ValueError):
    pass


class EmptyLabelError(GsliError, ValueError):
    pass


class NumericError(GsliError, ArithmeticError):
    pass


class TrainingError(GsliError, RuntimeError):
    pass


class ConfigError(GsliError, ValueError):
    pass
