"""Conditional quantum beats in a two-mode optical cavity.

Model parameters and operators, closed-form shift/dephasing predictions,
master-equation and quantum-trajectory engines with drive-gating feedback,
click-stream correlation, and beat-curve analysis.
"""
from . import analytic
from .analysis import (BeatFit, FitError, RegressionResult, ShiftAmbiguity, bin_for_purpose,
                       envelope_fit, match_curves, sweep_regression)
from .clickstream import (ClickStream, CorrelationHistogram, StreamError, correlate,
                          filter_triggered, rebin, subtract_background)
from .engine import (DetectionConfig, G2Curve, PulseProtocol, SeedError, TruncationOverflow,
                     conditional_g2, run_trajectories)
from .operators import build_operators
from .params import LevelScheme, ParameterError, SystemParams, mhz, to_mhz

__version__ = "0.1.0"

__all__ = [
    "analytic", "BeatFit", "FitError", "RegressionResult", "ShiftAmbiguity", "bin_for_purpose",
    "envelope_fit", "match_curves", "sweep_regression", "ClickStream", "CorrelationHistogram",
    "StreamError", "correlate", "filter_triggered", "rebin", "subtract_background",
    "DetectionConfig", "G2Curve", "PulseProtocol", "SeedError", "TruncationOverflow",
    "conditional_g2", "run_trajectories", "build_operators", "LevelScheme", "ParameterError",
    "SystemParams", "mhz", "to_mhz",
]
