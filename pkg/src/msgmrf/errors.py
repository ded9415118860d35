"""Exception hierarchy shared across the package."""


class MsgmrfError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MsgmrfError, ValueError):
    """A non-positive pivot was met during Cholesky factorization."""

    def __init__(self, message="matrix is not positive definite", pivot=None):
        super().__init__(message)
        self.pivot = pivot


class DimensionMismatch(MsgmrfError, ValueError):
    pass


class InvalidExtent(MsgmrfError, ValueError):
    pass


class PointOutsideMesh(MsgmrfError, ValueError):
    """Raised when evaluation points fall outside the mesh hull.

    ``indices`` lists the offending points so callers can drop them.
    """

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"{len(self.indices)} point(s) outside mesh, first at index {self.indices[:5]}")


class DegenerateSimplex(MsgmrfError, ValueError):
    pass


class NonPositiveParameter(MsgmrfError, ValueError):
    pass


class InvalidPhi(MsgmrfError, ValueError):
    pass


class InvalidQuantiles(MsgmrfError, ValueError):
    pass


class ColouringInfeasible(MsgmrfError, RuntimeError):
    pass


class InvalidTileExtent(MsgmrfError, ValueError):
    pass


class IndexOutOfRange(MsgmrfError, IndexError):
    pass


class DegenerateTrace(MsgmrfError, ValueError):
    pass


class EmptySet(MsgmrfError, ValueError):
    pass


class NonPositiveStd(MsgmrfError, ValueError):
    pass


class MalformedRow(MsgmrfError, ValueError):
    def __init__(self, line_number, text):
        self.line_number = line_number
        super().__init__(f"malformed row at line {line_number}: {text!r}")


class MissingColumn(MsgmrfError, ValueError):
    pass


class RankDeficient(MsgmrfError, ValueError):
    pass


class ConfigError(MsgmrfError, ValueError):
    pass


class SamplerFailure(MsgmrfError, RuntimeError):
    """Fatal error inside a Gibbs sweep; ``dump`` holds a state snapshot."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
