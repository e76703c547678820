"""Exception types shared across the package.

The CLI maps these onto exit codes, so new failure modes should reuse an
existing category where possible.
"""


class ArmFormerError(Exception):
    """Base class for all package errors."""


class ShapeError(ArmFormerError):
    """Tensor shapes violate an operation's contract."""


class ContractError(ArmFormerError):
    """A non-shape precondition was violated (non-scalar loss, bad labels...)."""


class ConfigError(ArmFormerError):
    """Invalid model or schedule configuration."""


class DataError(ArmFormerError):
    """Malformed dataset contents (labels out of range, bad palette values...)."""


class NetpbmError(DataError):
    """A PPM/PGM file could not be parsed."""


class CheckpointError(ArmFormerError):
    """Checkpoint bytes failed version or checksum validation."""


class TrainingError(ArmFormerError):
    """Training diverged or produced a non-finite loss."""
