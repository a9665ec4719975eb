"""Detected-field operator for the H port, including the local oscillator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..operators import SystemOperators
from ..params import ParameterError


@dataclass(frozen=True)
class DetectionConfig:
    """How H-port photons reach the detectors.

    ``mode="cavity"`` detects the H-mode output mixed with a fraction of the
    V-mode output (the half-wave-plate rotation); ``epsilon`` is then the
    local-oscillator amplitude in units of the intracavity field at full
    drive, and it follows the drive when the drive is gated.
    ``mode="atomic"`` uses the constant-amplitude operator epsilon + sigma_H.

    ``split`` is the probability that a detected photon lands on APD A.
    ``background_rate`` is the total uncorrelated count rate (counts/s),
    shared between the detectors with the same split.
    """

    epsilon: float | None = None
    mode: str = "cavity"
    split: float = 0.5
    efficiency: float = 1.0
    background_rate: float = 0.0
    start_channel: str = "APD_A"

    def __post_init__(self):
        if self.mode not in ("cavity", "atomic"):
            raise ValueError("mode must be 'cavity' or 'atomic'")
        for name in ("split", "efficiency"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.background_rate < 0:
            raise ValueError("background_rate must be non-negative")
        if self.start_channel not in ("APD_A", "APD_B"):
            raise ValueError("start_channel must be APD_A or APD_B")

    def lo_amplitude(self, ops: SystemOperators) -> float:
        return ops.params.epsilon if self.epsilon is None else self.epsilon


def hwp_epsilon(angle_deg: float, alpha: float) -> float:
    """Local-oscillator amplitude from a half-wave-plate rotation.

    A rotation by theta mixes sin(2 theta) of the V output into the H port.
    """
    return math.sin(2 * math.radians(angle_deg)) * alpha


class DetectedField:
    """C(f) = A + lam * f, with f the drive-field fraction alpha(t)/alpha.

    For the cavity mode A = sqrt(2 kappa) (c a_H + s b_V) and
    lam = sqrt(2 kappa) * epsilon; the orthogonal port is
    B = sqrt(2 kappa) (-s a_H + c b_V). For the atomic mode A = sigma_H,
    lam = epsilon and the LO does not follow the drive.
    """

    def __init__(self, ops: SystemOperators, detection: DetectionConfig):
        self.mode = detection.mode
        eps = detection.lo_amplitude(ops)
        p = ops.params
        if self.mode == "cavity":
            if eps > 0 and p.alpha <= 0:
                raise ParameterError("epsilon: cavity local oscillator needs alpha > 0")
            s = eps / p.alpha if eps > 0 else 0.0
            if s > 1:
                raise ParameterError("epsilon: must not exceed alpha in cavity mode")
            c = math.sqrt(1 - s * s)
            root = math.sqrt(2 * p.kappa)
            self.A = root * (c * ops.a_h + s * ops.a_v)
            self.B = root * (-s * ops.a_h + c * ops.a_v)
            self.lam = root * eps
            self.follows_drive = True
        else:
            self.A = ops.sigma_h
            self.B = None
            self.lam = eps
            self.follows_drive = False
        self.dim = ops.dim

    def op(self, frac: float = 1.0) -> np.ndarray:
        f = frac if self.follows_drive else 1.0
        return self.A + self.lam * f * np.eye(self.dim)

    def rate(self, rho: np.ndarray, frac: float = 1.0) -> float:
        c = self.op(frac)
        return float(np.real(np.trace(c.conj().T @ c @ rho)))
