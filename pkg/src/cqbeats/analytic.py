"""Closed-form model of Zeeman coherence under Rayleigh-scattering jumps.

The ground-state superposition prepared by a first H photon precesses at the
Larmor frequency, picks up the differential AC Stark shift while driven, and
receives a small phase kick at every pi spontaneous emission. Averaging the
kicks over a Poisson number of jumps gives a frequency shift and a dephasing
rate, both exposed here together with the exact Poisson sum they approximate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import stats

from .params import SystemParams, to_mhz


class TruncationError(RuntimeError):
    """The Poisson sum needs more terms than allowed."""


def ac_stark_shift(params: SystemParams) -> float:
    """Light shift of |g+> (rad/s); |g-> is shifted by the opposite amount."""
    half = params.gamma / 2
    d = params.detuning
    return -params.g ** 2 * params.alpha ** 2 * d / (half ** 2 + d ** 2)


def jump_rate(params: SystemParams) -> float:
    """Rate of pi Rayleigh-scattering jumps, 2 g^2 |alpha|^2 / (gamma/2)."""
    return 2 * params.g ** 2 * params.alpha ** 2 / (params.gamma / 2)


def jump_shift(params: SystemParams) -> float:
    return 8 * params.g ** 2 * params.alpha ** 2 * params.detuning / params.gamma ** 2


def decoherence_rate(params: SystemParams) -> float:
    return 2 * params.g ** 2 * params.alpha ** 2 * params.detuning ** 2 / (params.gamma / 2) ** 3


def light_shift(params: SystemParams) -> float:
    """Net differential shift of the (g+/-, g0) coherence, AC Stark plus jumps."""
    return ac_stark_shift(params) + jump_shift(params)


@dataclass(frozen=True)
class GroundSuperposition:
    """Amplitudes on (g-, g0, g+) at time t."""

    c_minus: complex
    c_zero: complex
    c_plus: complex
    t: float = 0.0

    @classmethod
    def prepare(cls, C0: complex, C1: complex, t: float = 0.0,
                params: SystemParams | None = None) -> "GroundSuperposition":
        """C0 (|g-> + |g+>)/sqrt2 + C1 |g0>, evolved for t without jumps."""
        w = 0.0 if params is None else params.delta_g + ac_stark_shift(params)
        s = C0 / math.sqrt(2)
        return cls(s * np.exp(1j * w * t), complex(C1), s * np.exp(-1j * w * t), t)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([self.c_minus, self.c_zero, self.c_plus], dtype=complex)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def coherence(self, a: int, b: int) -> complex:
        """rho_ab = c_a c_b^* with indices -1, 0, +1."""
        amp = self.amplitudes
        return complex(amp[a + 1] * np.conj(amp[b + 1]))


def _kick(params: SystemParams) -> tuple[float, complex]:
    """(modulus ratio r, unit phase u) of one jump on |g+> relative to |g0>."""
    half, d = params.gamma / 2, params.detuning
    mod = math.hypot(half, d)
    return half / mod, complex(half, -d) / mod


def n_jump_state(psi: GroundSuperposition, n: int, params: SystemParams) -> GroundSuperposition:
    """State after n Rayleigh jumps, renormalized."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return psi
    r, u = _kick(params)
    # g0 factor divided out: |g0> keeps weight 1, g+/- shrink by r per jump
    cm = psi.c_minus * (r * np.conj(u)) ** n
    cp = psi.c_plus * (r * u) ** n
    c0 = psi.c_zero
    norm = math.sqrt(abs(cm) ** 2 + abs(c0) ** 2 + abs(cp) ** 2)
    return GroundSuperposition(cm / norm, c0 / norm, cp / norm, psi.t)


@dataclass(frozen=True)
class CoherencePrediction:
    t: float
    rho_plus_minus: complex
    rho_plus_minus_approx: complex
    rho_plus_zero: complex
    rho_plus_zero_approx: complex
    rho_minus_zero: complex
    rho_minus_zero_approx: complex
    delta_ac: float
    delta_jump: float
    delta_light: float
    gamma_decoh: float
    n_cut: int


def poisson_cutoff(mean: float, tail: float = 1e-12) -> int:
    """Smallest n_cut whose Poisson tail mass beyond n_cut is below ``tail``."""
    if mean <= 0:
        return 0
    return int(stats.poisson.isf(tail, mean)) + 1


def averaged_coherences(C0: complex, C1: complex, t: float, params: SystemParams,
                        tail: float = 1e-12, n_cut_max: int = 100_000) -> CoherencePrediction:
    """Poisson-averaged ground coherences after a time t of continuous drive.

    The exact columns sum the normalized n-jump coherences against the
    Poisson weights of mean Gamma*t; the ``_approx`` columns are the
    exponential forms valid for 2*Delta/gamma << 1.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    rate = jump_rate(params)
    mu = rate * t
    n_cut = poisson_cutoff(mu, tail)
    if n_cut > n_cut_max:
        raise TruncationError(f"Poisson sum needs {n_cut} terms (> {n_cut_max})")

    d_ac = ac_stark_shift(params)
    d_jump = jump_shift(params)
    g_dec = decoherence_rate(params)
    w = params.delta_g + d_ac
    r, u = _kick(params)
    n = np.arange(n_cut + 1)
    weights = stats.poisson.pmf(n, mu) if mu > 0 else (n == 0).astype(float)
    a0, a1 = abs(C0) ** 2, abs(C1) ** 2
    rn = r ** n
    denom = a0 * rn ** 2 + a1
    pm_terms = rn ** 2 * u ** (2 * n) / denom
    p0_terms = rn * u ** n / denom
    m0_terms = rn * np.conj(u) ** n / denom

    pm_pref = a0 / 2 * np.exp(-2j * w * t)
    p0_pref = C0 * np.conj(C1) / math.sqrt(2) * np.exp(-1j * w * t)
    m0_pref = C0 * np.conj(C1) / math.sqrt(2) * np.exp(1j * w * t)

    return CoherencePrediction(
        t=t,
        rho_plus_minus=complex(pm_pref * np.sum(weights * pm_terms)),
        rho_plus_minus_approx=complex(pm_pref * np.exp(-(2 * g_dec + 2j * d_jump) * t)),
        rho_plus_zero=complex(p0_pref * np.sum(weights * p0_terms)),
        rho_plus_zero_approx=complex(p0_pref * np.exp(-(g_dec + 1j * d_jump) * t)),
        rho_minus_zero=complex(m0_pref * np.sum(weights * m0_terms)),
        rho_minus_zero_approx=complex(m0_pref * np.exp(-(g_dec - 1j * d_jump) * t)),
        delta_ac=d_ac, delta_jump=d_jump, delta_light=d_ac + d_jump,
        gamma_decoh=g_dec, n_cut=n_cut,
    )


def predict_phase_shift(width: float, params: SystemParams, coherence: str = "zero") -> float:
    """Phase lead of the continuously driven branch over a dark window of ``width``.

    ``coherence="zero"`` refers to the (g+/-, g0) coherence seen with a strong
    local oscillator; ``"pm"`` to the (g+, g-) coherence, which shifts twice
    as fast.
    """
    if width < 0:
        raise ValueError("width must be non-negative")
    factor = {"zero": 1.0, "pm": 2.0}[coherence]
    return factor * light_shift(params) * width


def amplitude_recovery(width: float, gamma_decoh: float) -> float:
    """Beat-amplitude ratio feedback/no-feedback after a dark window."""
    return math.exp(gamma_decoh * width)


def predict_beat_envelope(t, params: SystemParams, gamma_other: float = 0.0,
                          omega: float | None = None, gamma_decoh: float | None = None):
    """1 + exp(-(Gamma_other + Gamma_decoh) t) cos(omega t)."""
    if gamma_other < 0:
        raise ValueError("gamma_other must be non-negative")
    g_dec = decoherence_rate(params) if gamma_decoh is None else gamma_decoh
    if omega is None:
        omega = params.delta_g + light_shift(params)
    t = np.asarray(t, dtype=float)
    return 1.0 + np.exp(-(gamma_other + g_dec) * t) * np.cos(omega * t)


def prediction_row(params: SystemParams) -> dict[str, float]:
    return {
        "g_mhz": to_mhz(params.g),
        "photon_number": params.alpha ** 2,
        "detuning_mhz": to_mhz(params.detuning),
        "gamma_mhz": to_mhz(params.gamma),
        "delta_ac_mhz": to_mhz(ac_stark_shift(params)),
        "delta_jump_mhz": to_mhz(jump_shift(params)),
        "delta_light_mhz": to_mhz(light_shift(params)),
        "gamma_decoh_mhz": to_mhz(decoherence_rate(params)),
    }


def write_prediction_table(path, rows: Iterable[dict[str, float]]) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: f"{v:.10g}" for k, v in row.items()})
