"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` (and subclasses) to exit code 2 and every
other :class:`EITError` to exit code 1.
"""


class EITError(Exception):
    pass


class ConfigError(EITError, ValueError):
    """Invalid configuration, parameters or input files."""


class MeshError(ConfigError):
    """Mesh violates a structural invariant."""


class ParseError(ConfigError):
    pass


class DimensionError(ConfigError):
    pass


class NumericalError(EITError):
    """A factorization or solve failed."""


class FitError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    pass


class GenerationError(EITError):
    pass


class ScoringError(ConfigError):
    pass
