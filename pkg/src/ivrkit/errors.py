"""Exception hierarchy shared by all modules."""


class IvrError(Exception):
    """Base class for every error raised by ivrkit."""


class InvalidParameterError(IvrError, ValueError):
    pass


class FormatError(IvrError, ValueError):
    """Malformed PES, config or checkpoint file."""


class ConvergenceError(IvrError):
    def __init__(self, message, worst_residual=None):
        super().__init__(message)
        self.worst_residual = worst_residual


class CoverageError(IvrError):
    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class HermiticityError(IvrError):
    pass


class PropagationError(IvrError):
    def __init__(self, message, time_fs=None):
        super().__init__(message if time_fs is None else f"{message} (t = {time_fs:.6g} fs)")
        self.time_fs = time_fs


class DegenerateStateError(IvrError):
    pass


class InsufficientDataError(IvrError):
    pass


class InvalidStateError(IvrError):
    pass


class DegenerateWindowError(IvrError):
    pass


class ConfigError(IvrError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
