"""Exception taxonomy for the library.

Each class corresponds to a distinct failure mode of the numerical
pipeline; they all derive from TyurinLabError so callers can catch the
whole family at once.
"""


class TyurinLabError(Exception):
    """Base class for all library errors."""


# -- curve / periods ------------------------------------------------------

class DegenerateCurve(TyurinLabError):
    """Q is not squarefree (or has the wrong degree)."""


class PeriodComputationFailed(TyurinLabError):
    """Period matrices do not satisfy the Riemann conditions."""


class ChartError(TyurinLabError):
    """Evaluation requested in an invalid chart (e.g. at a branch point)."""


class InvalidDivisor(TyurinLabError):
    """Divisor violates a precondition (coincident poles, wrong degree...)."""


class PathError(TyurinLabError):
    """Integration path could not be constructed or crosses a branch point."""


class TruncationError(TyurinLabError):
    """Requested tolerance unreachable at the configured truncation."""


# -- normal form ----------------------------------------------------------

class IllConditionedReduction(TyurinLabError):
    """A coefficient fell inside the zero-detection ambiguity band."""


class SingularInput(TyurinLabError):
    """det G identically zero."""


class InvalidDisk(TyurinLabError):
    """A pole or root sits on the disk boundary."""


# -- Tyurin / kernel ------------------------------------------------------

class AmbiguousCorank(TyurinLabError):
    """A singular value straddles the corank threshold band."""


class OnThetaDivisor(TyurinLabError):
    """Bundle has h^1 > 0; the Cauchy kernel does not exist."""

    def __init__(self, corank, msg=None):
        self.corank = corank
        super().__init__(msg or f"bundle on theta divisor, corank {corank}")


class SingularEvaluation(TyurinLabError):
    """Kernel evaluated at an excluded point."""


class NumericalLimitFailure(TyurinLabError):
    """Richardson extrapolation failed to converge."""


class SpecialDivisor(TyurinLabError):
    """The divisor D is special; half-differential construction undefined."""


class ConnectionAxiomViolation(TyurinLabError):
    """Assembled connection fails the local analyticity axioms."""


# -- monodromy ------------------------------------------------------------

class PathTooClose(TyurinLabError):
    """Transport path violates the clearance from singular points."""


class IntegratorStall(TyurinLabError):
    """Adaptive step-size underflow during transport."""


class ApparentSingularityViolation(TyurinLabError):
    """Local monodromy around an apparent singularity is not the identity."""


class CharacterMismatch(TyurinLabError):
    """Monodromy ratio for two divisor choices is not scalar."""


# -- symplectic -----------------------------------------------------------

class ContourError(TyurinLabError):
    """Quadrature contour hits another singularity."""


class StepSizeError(TyurinLabError):
    """Finite-difference step outside the stable band."""


class AdmissibilityError(TyurinLabError):
    """Graph jump data violates the admissibility conditions."""


class NonTransversalFamily(TyurinLabError):
    """Family does not cross the theta divisor transversally."""
