"""Exception hierarchy.

``ValidationError`` subclasses signal malformed input; ``InfeasibleError``
subclasses signal a well-formed request with no numeric solution. The CLI
maps them to exit codes 1 and 2.
"""


class CeoflError(Exception):
    code = "CeoflError"

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class ValidationError(CeoflError, ValueError):
    pass


class InfeasibleError(CeoflError, ArithmeticError):
    pass


class InvalidSpec(ValidationError):
    pass


class AllRatesZero(InfeasibleError):
    pass


class DistortionNonpositive(ValidationError):
    pass


class DistortionBelowFloor(InfeasibleError):
    pass


class InfeasibleTotalDistortion(DistortionBelowFloor):
    pass


class InconsistentAllocation(ValidationError):
    pass


class CertificateMissing(ValidationError):
    pass


class RateUnreachable(InfeasibleError):
    pass


class ZeroRate(InfeasibleError):
    pass


class StepOverflow(InfeasibleError):
    pass


class EmptyFeasibleGrid(InfeasibleError):
    pass


class DivergenceDetected(InfeasibleError):
    pass


class InsufficientSamples(ValidationError):
    pass
