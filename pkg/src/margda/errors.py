"""Exception types raised across the package."""

import numpy as np


class MargdaError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MargdaError, ValueError):
    pass


class NonFiniteError(MargdaError, ValueError):
    pass


class SingularMatrix(MargdaError, np.linalg.LinAlgError):
    pass


class ConvergenceFailure(MargdaError, np.linalg.LinAlgError):
    pass


class SpectrumOverlap(MargdaError, np.linalg.LinAlgError):
    """The Sylvester operator is singular: eig(a) and eig(-b) intersect."""


class DimensionTooLarge(MargdaError, ValueError):
    pass


class EmptyDomain(MargdaError, ValueError):
    pass


class NoSharedClasses(MargdaError, ValueError):
    pass


class NonDecreasingLoss(MargdaError, RuntimeError):
    """An alternating step increased the total loss."""


class ParseError(MargdaError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class InconsistentWidth(ParseError):
    pass


class NegativeIndex(ParseError):
    pass


class InsufficientTargetLabels(MargdaError, ValueError):
    def __init__(self, cls, available, required):
        self.cls = cls
        self.available = available
        self.required = required
        super().__init__(
            f"class {cls} has {available} labeled target rows, {required} required"
        )


class LabelOutOfRange(MargdaError, ValueError):
    pass


class EmptyTrainingSet(MargdaError, ValueError):
    pass


class EmptyClass(MargdaError, ValueError):
    pass


class LengthMismatch(MargdaError, ValueError):
    pass


class ConfigError(MargdaError, ValueError):
    pass
