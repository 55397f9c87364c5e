"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class ConfigurationError(ValueError):
    """A system or experiment configuration is invalid."""


class UnsupportedConfiguration(ConfigurationError):
    """A configuration is valid in general but not handled by the requested computation."""


class DegenerateDirection(ArithmeticError):
    """The closed-form test-channel solution needs a direction that is zero."""
