"""Conformal prediction intervals for potential outcomes under continuous treatments."""

from .core import (CalibratedScores, Dataset, HardIntervention, PredictionInterval, Sample, SoftIntervention,
                   build_interval, calibrate, empirical_coverage, parse_intervention)
from .known import KnownShiftProblem, interval_soft, intervals_soft, search_s_star_known, shift_weights
from .quantile import pinball_loss, recover_eta, scalar_quantile, weighted_theta
from .unknown import (GaussianTilt, TiltProblem, TiltSolution, interval_fixed_sigma, interval_hard,
                      search_s_star_unknown, solve_ps, tilt_value, v_last)

__all__ = [
    "CalibratedScores", "Dataset", "HardIntervention", "PredictionInterval", "Sample", "SoftIntervention",
    "build_interval", "calibrate", "empirical_coverage", "parse_intervention",
    "KnownShiftProblem", "interval_soft", "intervals_soft", "search_s_star_known", "shift_weights",
    "pinball_loss", "recover_eta", "scalar_quantile", "weighted_theta",
    "GaussianTilt", "TiltProblem", "TiltSolution", "interval_fixed_sigma", "interval_hard",
    "search_s_star_unknown", "solve_ps", "tilt_value", "v_last",
]
