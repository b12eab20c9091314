"""Exception hierarchy shared by all modules."""


class NefsacError(Exception):
    """Base class for library errors."""


class NotEnoughData(NefsacError):
    pass


class DegenerateInput(NefsacError):
    pass


class DegenerateSample(NefsacError):
    pass


class DegenerateModel(NefsacError):
    pass


class SolverFailure(NefsacError):
    pass


class NearParallelRays(NefsacError):
    pass


class ShapeMismatch(NefsacError):
    pass


class FormatError(NefsacError):
    pass


class EmptyDataset(NefsacError):
    pass


class NoModelFound(NefsacError):
    pass


class GenerationFailed(NefsacError):
    pass


class ConfigError(NefsacError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
