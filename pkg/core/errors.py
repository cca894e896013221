"""Error hierarchy shared by every package."""


class MaskPredictError(Exception):
    """Base class for all errors raised by this project."""


class ConfigurationError(MaskPredictError):
    """A configuration value or combination is invalid."""


class DimensionError(MaskPredictError, ValueError):
    """Two operands have incompatible shapes."""


class ContractError(MaskPredictError):
    """A caller violated an operation's precondition."""


class NumericError(MaskPredictError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class FormatError(MaskPredictError):
    """A serialized artifact is malformed, truncated or of the wrong version."""


class UsageError(MaskPredictError):
    """Command-line usage is invalid."""


class TargetIndexError(MaskPredictError, IndexError):
    """A classification target lies outside the logits' class range."""
