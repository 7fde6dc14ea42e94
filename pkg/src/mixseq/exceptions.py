"""Exception hierarchy.

Every exception carries a short ``category`` string that the command line
interface reports in its machine-readable error output.
"""


class MixseqError(Exception):
    category = "error"


class InvalidArgumentError(MixseqError, ValueError):
    category = "invalid-argument"


class NumericalFailureError(MixseqError, ArithmeticError):
    """Raised when a covariance matrix cannot be factored, even with jitter."""

    category = "numerical-failure"


class FitFailureError(MixseqError, RuntimeError):
    category = "fit-failure"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
        # filled in by the campaign driver when a fit fails mid-run
        self.state = None


class ProtocolError(MixseqError, RuntimeError):
    """Raised when ask/tell calls arrive out of order."""

    category = "protocol"


class PersistenceError(MixseqError, ValueError):
    category = "persistence"
