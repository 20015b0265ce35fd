"""Exception hierarchy shared by all modules."""


class SwarmlocError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(SwarmlocError, ValueError):
    pass


class EmptyMaskError(SwarmlocError, ValueError):
    pass


class ExtractionFailedError(SwarmlocError):
    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class ConfigurationError(SwarmlocError):
    pass


class PlacementInfeasibleError(SwarmlocError):
    pass


class InvalidCropError(SwarmlocError, ValueError):
    pass


class ManifestParseError(SwarmlocError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ManifestValidationError(SwarmlocError):
    def __init__(self, message, frames=()):
        super().__init__(message)
        self.frames = list(frames)


class UndefinedAPError(SwarmlocError, ValueError):
    pass


class ConsistencyError(SwarmlocError):
    pass
