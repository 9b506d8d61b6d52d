"""Exception hierarchy shared by every coalform module."""


class CoalformError(Exception):
    """Base class for all errors raised by coalform."""


class InfeasibleCoalition(CoalformError):
    """The cost oracle reports unbounded cost for the coalition."""


class DegenerateProportional(CoalformError):
    """Proportional split requested for a coalition whose standalone costs sum to zero."""


class DegenerateSurplus(CoalformError):
    """Nash bargaining is undefined because the coalition has no positive surplus."""


class NotAMember(CoalformError):
    """A participant was queried against a coalition it does not belong to."""


class InstanceTooLarge(CoalformError):
    """An exhaustive enumeration would exceed the configured budget."""


class NoStableStructure(CoalformError):
    """No stable coalition structure exists (possible only for mixed mechanisms)."""


class NonConvergence(CoalformError):
    """The formation protocol exceeded its round bound."""


class SolverFailure(CoalformError):
    """The LP solver did not return an optimal solution."""


class BoundViolation(CoalformError):
    """A proven bound failed on a concrete instance."""


class ParseError(CoalformError):
    """Malformed scenario, set-cover or config input."""


class ValidationError(CoalformError):
    """Input parsed but breaks a domain invariant."""
