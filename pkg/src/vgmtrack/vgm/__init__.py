from .fit import (
    ComponentPosterior,
    DimensionMismatchError,
    FitResult,
    Hyperparameters,
    NotPositiveDefiniteError,
    VgmModel,
    elbo,
    fit,
    predictive,
    prune,
)
from .student import InvalidDofError, StudentMixture, ZeroMarginalError, condition, marginalize, student_logpdf

__all__ = [
    "ComponentPosterior",
    "DimensionMismatchError",
    "FitResult",
    "Hyperparameters",
    "InvalidDofError",
    "NotPositiveDefiniteError",
    "StudentMixture",
    "VgmModel",
    "ZeroMarginalError",
    "condition",
    "elbo",
    "fit",
    "marginalize",
    "predictive",
    "prune",
    "student_logpdf",
]
