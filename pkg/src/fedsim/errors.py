"""Exception types shared across the package."""


class FedsimError(Exception):
    """Base class for all fedsim errors."""


class ShapeError(FedsimError):
    """Tensor shape mismatch, annotated with the offending layer."""

    def __init__(self, message: str, layer: str = ""):
        self.layer = layer
        super().__init__(f"{layer}: {message}" if layer else message)


class FormatError(FedsimError):
    """Malformed binary container or dataset file."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PartitionError(FedsimError):
    """Partition request cannot be satisfied by the source dataset."""


class ConfigError(FedsimError):
    """Invalid experiment configuration; ``field`` points at the offender."""

    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class GanDivergedError(FedsimError):
    """Adversarial training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"{message} (epoch {epoch}, step {step})")
