"""Exception hierarchy shared across the library."""


class RuadError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RuadError):
    """Operand dimensions do not agree."""


class NumericError(RuadError):
    """Numeric-domain violation: division by zero, log of a non-positive
    value, a value outside its admissible interval, or a non-finite result."""


class ContractError(RuadError):
    """A caller violated an API precondition (non-scalar loss, tensor not on
    the tape, missing ground-truth fields, ...)."""


class IngestionError(RuadError):
    """CSV ingestion failure; the message names the offending row/column."""


class ConfigError(RuadError):
    """Invalid or degenerate configuration."""


class ProtocolError(RuadError):
    """An evaluation protocol cannot be applied to the given dataset."""


class MetricError(RuadError):
    """A metric is undefined for the given inputs."""


class TrainingError(RuadError):
    """Training cannot proceed (e.g. single-group data)."""


class DivergenceError(TrainingError):
    """Training produced a non-finite loss or gradient."""
