"""Exception hierarchy shared by every module of the package."""


class BRDRError(Exception):
    """Base class for all errors raised by this package."""


class InputShapeError(BRDRError, ValueError):
    pass


class UnsupportedOrderError(BRDRError, ValueError):
    pass


class NumericalDivergenceError(BRDRError, FloatingPointError):
    """A loss, residual or gradient became non-finite.

    ``iteration`` is filled in by the training loop when known.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class DegenerateBatchError(BRDRError, ValueError):
    pass


class StationaryPointError(BRDRError, ValueError):
    pass


class DomainError(BRDRError, ValueError):
    pass


class OracleError(BRDRError, RuntimeError):
    pass


class DiagnosticScaleError(BRDRError, ValueError):
    pass


class ConfigError(BRDRError, ValueError):
    """Invalid experiment configuration.

    ``field`` names the offending key (dotted path) and ``line`` the source
    line when the error comes from the parser.
    """

    def __init__(self, message, field=None, line=None):
        prefix = ""
        if field is not None:
            prefix += f"{field}: "
        if line is not None:
            prefix = f"line {line}: " + prefix
        super().__init__(prefix + message)
        self.field = field
        self.line = line
