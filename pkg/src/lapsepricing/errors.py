"""Exception hierarchy shared by all modules."""


class LapsePricingError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveStep(LapsePricingError, ValueError):
    pass


class NegativeInitial(LapsePricingError, ValueError):
    pass


class NonPositiveLambda(LapsePricingError, ValueError):
    pass


class EmptySupport(LapsePricingError, ValueError):
    pass


class UnsupportedDensityModelPair(LapsePricingError, ValueError):
    pass


class TailBoundViolated(LapsePricingError, ValueError):
    pass


class DegenerateDenominator(LapsePricingError, ArithmeticError):
    pass


class NegativeRateEncountered(LapsePricingError, ValueError):
    pass


class BackendMismatch(LapsePricingError, ValueError):
    pass


class NonHyperbolicRegion(LapsePricingError, ValueError):
    pass


class SingularSystem(LapsePricingError, ArithmeticError):
    pass


class DegenerateAlphas(LapsePricingError, ArithmeticError):
    pass


class NonUniformKnots(LapsePricingError, ValueError):
    pass


class QuadratureNonConvergence(LapsePricingError, ArithmeticError):
    pass


class SeriesDiverges(LapsePricingError, ArithmeticError):
    pass


class PoleInB(LapsePricingError, ZeroDivisionError):
    pass


class NonConvergent(LapsePricingError, ArithmeticError):
    pass


class InvalidConfigAtP(LapsePricingError, ValueError):
    pass


class LatticeMismatch(LapsePricingError, ValueError):
    pass
