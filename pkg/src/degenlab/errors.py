"""Exception types shared across the package."""


class SamplingError(ValueError):
    """A sampled field produced a non-finite value.

    Attributes
    ----------
    index : tuple of int
        Multi-index of the first offending node.
    """

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class StencilError(IndexError):
    """A finite-difference stencil reaches outside the grid."""


class InconsistentRowError(ValueError):
    """The weight vanishes at an interior node where the source does not."""


class PreconditionError(ValueError):
    """Input data violates a documented precondition of an estimate."""


class ConfigError(ValueError):
    """Scenario configuration failed to parse or validate.

    Attributes
    ----------
    key : str or None
        Dotted configuration key responsible for the error, when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
