"""Exception types shared across the package."""


class HintmatchError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(HintmatchError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInstanceError(HintmatchError):
    """The instance has no unique optimal matching."""


class TooLargeError(HintmatchError):
    """An enumeration would exceed the configured cap."""


class GenerationFailureError(HintmatchError):
    """Rejection sampling exhausted its attempt budget."""


class ProtocolFailureError(HintmatchError):
    """A decentralized protocol invariant was violated at runtime."""
