class WaynavError(Exception):
    pass


class ConfigurationError(WaynavError, ValueError):
    pass


class ValidationError(WaynavError, ValueError):
    pass


class PoseError(WaynavError, ValueError):
    """A pose or query point lies inside a wall."""


class StateError(WaynavError, RuntimeError):
    pass


class ParseError(WaynavError, ValueError):
    pass


class BackendError(WaynavError, RuntimeError):
    pass


class TrainingError(WaynavError, RuntimeError):
    """Training diverged; carries the last stable parameters and the partial curve."""

    def __init__(self, message, params=None, curve=None):
        super().__init__(message)
        self.params = params
        self.curve = curve if curve is not None else []


class LoadError(WaynavError, ValueError):
    pass
