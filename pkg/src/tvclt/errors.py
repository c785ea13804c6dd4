"""Exception hierarchy shared by the numeric modules and the harness."""


class TvcltError(Exception):
    """Base class for every error raised by tvclt."""


# --- Numeric errors ---

class NonSmoothDensity(TvcltError):
    """The law has no absolutely continuous density (jumps or atoms)."""


class ScoreUndefined(TvcltError):
    """The score was requested where the density is at or below the floor."""


class QuadratureDivergent(TvcltError):
    """An integral did not converge or exceeded its divergence cap."""


class DisconnectedSupport(TvcltError):
    """The density is not supported on a single connected interval."""


class GridTooSmall(TvcltError):
    """The grid extent clips more probability mass than allowed."""


class RingingError(TvcltError):
    """FFT ringing produced more negative mass than allowed."""


class DegenerateSum(TvcltError):
    """A leave-one-out sum was requested for a single summand."""


class GridMismatch(TvcltError):
    """Two grid densities cannot be brought onto a common grid."""


# --- Harness errors ---

class ParseError(TvcltError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ValidationError(TvcltError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ReportIOError(TvcltError):
    """A report file could not be written or read."""
