"""Exception hierarchy shared by all embprop modules."""


class EmbpropError(Exception):
    """Base class for every error raised by this package."""


class InvalidVertexError(EmbpropError, IndexError):
    pass


class InvalidArgumentError(EmbpropError, ValueError):
    pass


class EmptyLabelsError(EmbpropError, ValueError):
    pass


class NoNeighborsError(EmbpropError, ValueError):
    """Raised when a reconstruction is requested for a vertex without neighbors."""


class MissingRelationError(EmbpropError, KeyError):
    pass


class ShapeError(EmbpropError, ValueError):
    pass


class SamplingError(EmbpropError, ValueError):
    pass


class TrainingDivergedError(EmbpropError, FloatingPointError):
    def __init__(self, epoch, batch, message=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message or f"non-finite parameters after epoch {epoch}, batch {batch}")


class InvalidFractionError(EmbpropError, ValueError):
    pass


class InsufficientClassError(EmbpropError, ValueError):
    pass


class ParseError(EmbpropError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class UnknownVertexError(ParseError):
    pass


class FormatError(EmbpropError, ValueError):
    pass


class InvalidRemovalError(EmbpropError, ValueError):
    pass


class ConfigError(EmbpropError, ValueError):
    pass
