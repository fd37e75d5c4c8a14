"""Exception hierarchy shared by every module."""


class IOHPGError(Exception):
    """Base class for all library errors."""


class NonFinite(IOHPGError, ValueError):
    pass


class NotSchur(IOHPGError):
    """A matrix that must be Schur stable has spectral radius >= 1."""


class NoConvergence(IOHPGError):
    pass


class ZeroMatrix(IOHPGError, ValueError):
    pass


class DimensionMismatch(IOHPGError, ValueError):
    pass


class NotMinimal(IOHPGError, ValueError):
    """(A, B) not reachable or (A, C) not observable."""


class RankDeficient(IOHPGError, ValueError):
    """The observability matrix of the chosen history length has rank < n."""


class RankMismatch(IOHPGError):
    pass


class PhiMismatch(IOHPGError, ValueError):
    pass


class Underfilled(IOHPGError):
    """An IOH buffer was read before L input/output pairs were pushed."""


class Inconclusive(IOHPGError):
    pass


class Unbounded(NotSchur):
    """The cost is infinite because the projected closed loop is not Schur."""


class Diverged(IOHPGError):
    """An iterate left the sublevel set (step size too large)."""


class NotInSublevel(IOHPGError):
    pass


class SingularObservability(IOHPGError):
    """The controller observability matrix cannot be inverted reliably."""


class ConfigError(IOHPGError, ValueError):
    pass
