"""Error types raised by the toolkit."""

from __future__ import annotations


class CctError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(CctError, ValueError):
    """An input broke a documented precondition (shapes, ranges, names)."""


class SingularPointError(CctError):
    """An operation needed a regular point but dg/dy is singular there."""


class NewtonFailure(CctError):
    """Newton iteration did not converge.

    ``t`` is the simulation time of the failure when known and ``last`` the
    last good sample (a Point) when available.
    """

    def __init__(self, message: str, t: float | None = None, last=None):
        super().__init__(message)
        self.t = t
        self.last = last


class SingularJacobian(CctError):
    """The stacked Newton Jacobian was numerically singular."""


class NoCrossing(CctError):
    """The requested monitor never approaches zero."""


class EigenvalueOnAxis(CctError):
    """A real part fell inside the hyperbolicity threshold."""


class WrongElementKind(CctError):
    """A located point fails the inequality test of the requested element."""


class AmbiguousSpectrum(CctError):
    """Nonzero and zero eigenvalues are not separated well enough."""


class SingularReducedJacobian(CctError):
    """The reduced state matrix cannot be inverted."""


class BracketInvalid(CctError, ValueError):
    """The CCT bracket does not straddle the stability boundary."""


class Inconclusive(CctError):
    """Horizon reached with neither convergence nor instability."""


class Unclassifiable(CctError):
    """No rung of the mechanism ladder applies.

    ``diagnostics`` carries the quantities that were tested.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateDenominator(CctError):
    """A sensitivity quotient has a vanishing denominator."""


class IllConditioned(CctError):
    """The linear system for a sensitivity is numerically singular."""
