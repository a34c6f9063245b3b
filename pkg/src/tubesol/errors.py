"""Exception hierarchy shared by all tubesol modules."""


class TubeError(Exception):
    """Base class for every error raised by tubesol."""


# radial_core
class NonConvergence(TubeError):
    pass


class SupercriticalExponent(TubeError):
    pass


class OutOfTube(TubeError):
    pass


class DegenerateSpectrum(TubeError):
    pass


# manifold
class UnsupportedFamily(TubeError):
    pass


class RangeExceeded(TubeError):
    pass


class DegenerateTangent(TubeError):
    pass


class NonClosedCurve(TubeError):
    pass


# fermi
class TubeTooWide(TubeError):
    pass


class SingularMetric(TubeError):
    pass


class GridMismatch(TubeError):
    pass


# resonance
class OnResonance(TubeError):
    pass


class EmptyWindow(TubeError):
    pass


class BranchCrossing(TubeError):
    pass


# tube_solver
class UnsupportedGeometry(TubeError):
    pass


class SingularFiberOperator(TubeError):
    pass


class PointwiseBoundViolated(TubeError):
    pass


class NonpositiveState(TubeError):
    pass


class ThresholdExceeded(TubeError):
    pass


class LeftBall(TubeError):
    pass


class NoContraction(TubeError):
    pass


class ParameterContractViolated(TubeError):
    pass


# pohozaev
class NonzeroTrace(TubeError):
    pass


class ZeroField(TubeError):
    pass


class SubcriticalInput(TubeError):
    pass


# cli
class ConfigError(TubeError):
    pass
