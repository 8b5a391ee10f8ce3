"""Error taxonomy shared across the package.

Every failure mode maps to one of these, so callers (and the CLI exit-code
table) can branch on category rather than on message text.
"""
from __future__ import annotations


class SwatError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SwatError):
    """Shapes or axes that cannot be combined."""


class ConfigError(SwatError):
    """Invalid or inconsistent configuration values."""


class ContractError(SwatError):
    """A documented precondition was violated by the caller."""


class DataError(SwatError):
    """Malformed input data, e.g. token ids outside the vocabulary."""


class ProtocolError(SwatError):
    """An object was driven through an illegal state sequence."""


class IntegrityError(SwatError):
    """Persisted bytes fail validation (bad magic, truncation, bad offsets)."""


class NumericsError(SwatError):
    """Non-finite values where finite ones are required."""
