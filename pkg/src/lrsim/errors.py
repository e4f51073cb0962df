"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config/input/usage -> 2,
environment -> 3, numerical failure -> 4.
"""


class LrsimError(Exception):
    pass


class ShapeError(LrsimError):
    """Operand shapes are inconsistent with an operation's contract."""


class ContractError(LrsimError):
    """An API precondition was violated (non-scalar loss, unsorted times, ...)."""


class DomainError(LrsimError):
    """Math domain violation in strict mode (e.g. log of a non-positive value)."""


class ConfigError(LrsimError):
    """A configuration value is invalid or internally inconsistent."""


class FormatError(LrsimError):
    """A serialized container has the wrong magic, version or structure."""


class IntegrityError(FormatError):
    """A serialized container is truncated or its payload length disagrees."""


class InputError(LrsimError):
    """Runtime input (episode, actions file, message) unusable as provided."""


class NumericalError(LrsimError):
    """Training or simulation produced non-finite values it could not recover from."""
