"""Exception types shared across the package."""
from __future__ import annotations


class DSFError(Exception):
    """Base class for simulation errors."""


class ResourceError(DSFError, RuntimeError):
    """A computation exceeded its memory or window budget."""


class SearchOverflowError(DSFError, RuntimeError):
    """A nearest-point search grew past its radius cap without a hit."""


class RenewalTimeoutError(DSFError, RuntimeError):
    """No renewal step happened within the configured step budget."""


class ContractError(DSFError, ValueError):
    """An operation was called with arguments violating its precondition."""


class DomainError(DSFError, ValueError):
    """A path was evaluated outside its time domain."""


class InvariantViolation(DSFError, AssertionError):
    """A structural invariant checked at run time failed."""


class ConfigError(DSFError, ValueError):
    """Invalid experiment configuration."""
