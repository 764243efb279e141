"""Exception hierarchy. The CLI maps these onto exit codes."""


class AmtlError(Exception):
    exit_code = 1


class ConfigError(AmtlError, ValueError):
    exit_code = 1


class ShapeError(AmtlError, ValueError):
    exit_code = 1


class DataError(AmtlError, ValueError):
    exit_code = 2


class LabelError(DataError):
    pass


class NumericalError(AmtlError, ArithmeticError):
    exit_code = 3
