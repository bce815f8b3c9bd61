"""Exception and warning types raised across the package."""


class RobFuncError(Exception):
    """Base class for all package errors."""


class GridMismatch(RobFuncError, ValueError):
    """Curves or bases defined on different observation grids."""


class InsufficientData(RobFuncError, ValueError):
    """Too few observations for the requested computation."""


class SingularBasis(RobFuncError, ValueError):
    """B-spline evaluation matrix is rank deficient on the grid."""


class TruncationTooLarge(RobFuncError, ValueError):
    """Requested number of components exceeds what the data supports."""


class ZeroVariation(RobFuncError, ValueError):
    """All curves are identical; no principal direction exists."""


class SingularScatter(RobFuncError, ValueError):
    """Scatter matrix is not symmetric positive definite."""


class SingularDesign(RobFuncError, ValueError):
    """Design matrix (possibly weighted) is rank deficient."""


class UnknownTerm(RobFuncError, KeyError):
    """Term index refers to a predictor or pair that is not available."""


class TrimTooAggressive(RobFuncError, ValueError):
    """The trimmed subset is smaller than the number of model parameters."""


class ZeroTruth(RobFuncError, ValueError):
    """Reference surface has zero norm, so a relative error is undefined."""


class UndefinedAUC(RobFuncError, ValueError):
    """AUC requested with labels from a single class."""


class CSVFormatError(RobFuncError, ValueError):
    """Malformed functional-data CSV file."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DegenerateErrors(RobFuncError, UserWarning):
    """Regression residuals vanish (exact fit); scatter estimate is zero."""
