"""Exception hierarchy shared by all imit2d modules."""


class Imit2DError(Exception):
    """Base class for every error raised by this package."""


# geometry
class TooFewPoints(Imit2DError, ValueError):
    pass


class DegenerateConfiguration(Imit2DError, ValueError):
    pass


class PointAtInfinity(Imit2DError, ArithmeticError):
    pass


class SingularMatrix(Imit2DError, ArithmeticError):
    pass


class BehindCamera(Imit2DError, ValueError):
    pass


# perception
class InsufficientObservations(Imit2DError, ValueError):
    pass


class DivergedSolve(Imit2DError, RuntimeError):
    pass


class BounceInWindow(InsufficientObservations):
    """The observation window straddles a bounce; flight-only fit rejected."""


# extraction
class UnlabeledModel(Imit2DError, ValueError):
    pass


class InvalidWindowLength(Imit2DError, ValueError):
    pass


class SingleClassDataset(Imit2DError, ValueError):
    pass


# numnet
class DimensionMismatch(Imit2DError, ValueError):
    pass


class NonFiniteGradient(Imit2DError, FloatingPointError):
    pass


# policy / harness
class EmptyDataset(Imit2DError, ValueError):
    pass


class LengthMismatch(Imit2DError, ValueError):
    pass


class TooShort(Imit2DError, ValueError):
    pass


class NoValidWindows(Imit2DError, ValueError):
    pass


class CheckpointMismatch(Imit2DError, ValueError):
    pass


class ConfigError(Imit2DError, ValueError):
    pass
