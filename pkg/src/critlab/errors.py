"""Exception and warning types shared across the package."""


class CritError(Exception):
    """Base class for all errors raised by critlab."""


class InvalidPmf(CritError, ValueError):
    pass


class NegativeMass(InvalidPmf):
    pass


class MassNotOne(InvalidPmf):
    pass


class SupportTooLarge(InvalidPmf):
    pass


class EvaluationError(CritError, ValueError):
    pass


class NegativeRate(CritError, ValueError):
    pass


class ExprSyntaxError(CritError, ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExprSyntaxError):
    pass


class HorizonMismatch(CritError, ValueError):
    pass


class QuadratureFailure(CritError, RuntimeError):
    def __init__(self, message, achieved_error):
        super().__init__(f"{message} (achieved error {achieved_error:.3g})")
        self.achieved_error = achieved_error


class StepUnderflow(CritError, RuntimeError):
    pass


class EnvelopeViolation(CritError, RuntimeError):
    pass


class NoSurvivors(CritError, ValueError):
    pass


class TooFewSamples(CritError, ValueError):
    pass


class TooFewPoints(CritError, ValueError):
    pass


class ConfigInvalid(CritError, ValueError):
    def __init__(self, message, pointer=""):
        super().__init__(f"{message} (at {pointer or '/'})")
        self.pointer = pointer


class CritWarning(UserWarning):
    pass


class TruncationWarning(CritWarning):
    pass


class DegenerateMean(CritWarning):
    pass


class OverflowToLog(CritWarning):
    pass


class DomainEscape(CritWarning):
    pass


class CapExceeded(CritWarning):
    pass


class BoundOrderWarning(CritWarning):
    pass
