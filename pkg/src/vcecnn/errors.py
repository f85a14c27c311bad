"""Exception types raised across the package."""


class VCECNNError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(VCECNNError, ValueError):
    pass


class AxisError(VCECNNError, ValueError):
    pass


class NumericError(VCECNNError, ArithmeticError):
    pass


class ConfigError(VCECNNError, ValueError):
    pass


class ContractError(VCECNNError, RuntimeError):
    """An API was called in a state its contract forbids."""


class SpecError(VCECNNError, ValueError):
    """A model spec is inconsistent, or does not match the data or a checkpoint."""


class LabelError(VCECNNError, ValueError):
    pass


class DataError(VCECNNError, ValueError):
    pass


class DecodeError(DataError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path


class UndefinedMetricError(VCECNNError, ValueError):
    pass


class CheckpointError(VCECNNError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class UnknownLayerError(CheckpointError):
    pass
