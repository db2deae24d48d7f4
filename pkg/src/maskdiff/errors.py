"""Exception hierarchy shared by every maskdiff module."""


class MaskDiffError(Exception):
    """Base class for all maskdiff errors."""


class InvalidArgument(MaskDiffError, ValueError):
    pass


class ScheduleInvalid(InvalidArgument):
    """Mask size schedule does not sum to L or has a nonpositive step."""


class TooLarge(MaskDiffError, RuntimeError):
    """A brute-force resource guard was exceeded."""


class ZeroProbabilityContext(MaskDiffError, ValueError):
    """Conditional requested on an observed context of probability zero."""


class ConfigError(MaskDiffError, ValueError):
    pass
