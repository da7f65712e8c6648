"""Exception types shared across the package.

Parameter and domain problems subclass ValueError so callers that only know
the stdlib still catch them naturally; file-format problems get their own
branch so the CLI can map them to a distinct exit code.
"""


class FcpError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(FcpError, ValueError):
    """An argument is outside its documented range."""


class DomainError(FcpError, ValueError):
    """A value violates an elementwise precondition (e.g. sqrt of a negative)."""


class ModelError(FcpError, ValueError):
    """A noise model or filter pipeline is malformed or inconsistent."""


class ParseError(FcpError):
    """A file could not be parsed; the message names the line or offset."""


class StructuralError(FcpError):
    """File contents disagree with their declared structure (e.g. dimensions)."""


class TableLookupError(FcpError, KeyError):
    """A requested area is not covered by a max-distribution table."""


class CapacityError(FcpError):
    """A max-distribution table ran out of areas before the search finished."""


class EnvelopeUndefined(FcpError):
    """The cluster set is empty, so the false cluster proportion has no value."""
