"""Optimal randomised-trial allocations when the target population differs from the trial."""

from .allocation import (
    DesignMoments,
    density_ratio,
    design_moments,
    optimal_cdr,
    optimal_cir,
    optimal_cir_restricted,
)
from .eif import relative_efficiency, variance_bound
from .model import (
    CDR,
    CIR,
    IDENTITY,
    LOG,
    LOGIT,
    Generalize,
    LinkFunction,
    MixtureLaw,
    OutcomeModel,
    PostStratify,
    ProductLaw,
    Rectangle,
    Transport,
    Trial,
    delta,
    estimand_value,
)
from .numerics import RngStream, TruncatedNormal
from .scenario import baseline_setting

__version__ = "0.1.0"

__all__ = [
    "CDR", "CIR", "IDENTITY", "LOG", "LOGIT", "DesignMoments", "Generalize", "LinkFunction",
    "MixtureLaw", "OutcomeModel", "PostStratify", "ProductLaw", "Rectangle", "RngStream",
    "Transport", "Trial", "TruncatedNormal", "baseline_setting", "delta", "density_ratio",
    "design_moments", "estimand_value", "optimal_cdr", "optimal_cir", "optimal_cir_restricted",
    "relative_efficiency", "variance_bound",
]
