"""Exception types shared across the package."""

from __future__ import annotations


class SpenError(Exception):
    """Base class for all package-specific errors."""


class DomainError(SpenError):
    """A user-supplied callable returned a non-finite or mis-shaped value."""


class OracleKindError(SpenError):
    """An oracle was queried for a sample kind it does not provide."""


class ConfigError(SpenError):
    """Invalid configuration value, file, or argument combination."""


class SubsolverError(SpenError):
    """An inner convex subsolver failed to reach its gap tolerance.

    Carries the best duality-gap bound achieved so callers can decide
    whether to accept the result anyway.
    """

    def __init__(self, message: str, gap: float = float("nan")):
        super().__init__(message)
        self.gap = gap


class SteeringError(SpenError):
    """Penalty steering could not satisfy its acceptance condition."""


class BudgetExceeded(SpenError):
    """A solver run would consume more oracle calls than its budget allows."""


class CertificationError(SpenError):
    """Criticality certification is impossible with the available oracles."""
