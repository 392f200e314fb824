"""Adaptive dyadic histogram density estimation on (0, 1].

The estimator is a histogram on dyadic bins whose resolution level is chosen
locally, per bin, by comparing each candidate level against all finer ones.
The comparison threshold is calibrated by Monte-Carlo simulation so that on
locally constant densities the selector keeps drilling down to the correct
level (the propagation calibration in :mod:`adahaar.calibrate`).

Modules
-------
dyadic      dyadic intervals and the multi-resolution counts pyramid
selector    local level selection and the adaptive estimator
calibrate   Monte-Carlo threshold calibration engine
density     analytic piecewise power-law densities and oracle quantities
studies     simulation studies checking the estimator's risk behaviour
cli         command line interface (``adahaar``)
_kernels    hot kernels: compiled extension with a bitwise-identical
            numpy fallback, selected at import
"""

from adahaar.calibrate import CalibrationConfig, ThresholdRecord, calibrate
from adahaar.density import (
    HolderProfile,
    PiecewiseDensity,
    builtin_density,
    load_density,
)
from adahaar.dyadic import CountsPyramid, bin_index, build_pyramid, max_level
from adahaar.errors import CalibrationInfeasibleError, NumericError, ValidationError
from adahaar.selector import adaptive_estimate, lepski_select, select_all
from adahaar.studies import StudyConfig, run_risk_study

__version__ = "0.1.0"

__all__ = [
    "CalibrationConfig",
    "CalibrationInfeasibleError",
    "CountsPyramid",
    "HolderProfile",
    "NumericError",
    "PiecewiseDensity",
    "StudyConfig",
    "ThresholdRecord",
    "ValidationError",
    "__version__",
    "adaptive_estimate",
    "bin_index",
    "build_pyramid",
    "builtin_density",
    "calibrate",
    "lepski_select",
    "load_density",
    "max_level",
    "run_risk_study",
    "select_all",
]
