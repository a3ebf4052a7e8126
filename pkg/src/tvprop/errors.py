"""Exception hierarchy shared by all modules."""


class TVPropError(Exception):
    """Base class for library errors."""


class ParameterError(TVPropError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(TVPropError, ValueError):
    """A model or run configuration is unsupported or inconsistent."""


class StateError(TVPropError, RuntimeError):
    """An operation was requested before its prerequisites were computed."""


class HighProbRegionError(TVPropError, RuntimeError):
    """No box reaching the requested probability mass was found.

    ``achieved_mass`` carries the best mass reached before giving up.
    """

    def __init__(self, message: str, achieved_mass: float):
        super().__init__(message)
        self.achieved_mass = achieved_mass
