"""Physical parameters and the simplified six-level scheme.

All rates are stored as angular frequencies in rad/s. Constructors taking
``*_mhz`` arguments interpret numbers in units of 2*pi*MHz, which is how the
laboratory quotes them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

TWO_PI = 2.0 * math.pi


def mhz(value: float) -> float:
    """Convert a rate quoted in 2*pi*MHz to rad/s."""
    return TWO_PI * 1e6 * value


def to_mhz(value: float) -> float:
    """Convert rad/s to 2*pi*MHz."""
    return value / (TWO_PI * 1e6)


# atomic sublevel order used throughout the package
GROUND = ("g-", "g0", "g+")
EXCITED = ("e-", "e0", "e+")
LEVELS = GROUND + EXCITED
MAGNETIC = {"g-": -1, "g0": 0, "g+": 1, "e-": -1, "e0": 0, "e+": 1}


class ParameterError(ValueError):
    """Raised for physically invalid parameter sets."""


@dataclass(frozen=True)
class SystemParams:
    g: float = mhz(1.2)
    kappa: float = mhz(3.0)
    gamma: float = mhz(6.0)
    delta_g: float = mhz(2.33)
    delta_e: float = mhz(2.83)
    delta_drive: float = 0.0
    delta_eff: float | None = None
    alpha: float = 1.0
    epsilon: float = 0.1
    n_max_v: int = 2
    n_max_h: int = 2
    branching: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("g", "kappa", "gamma"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")
        if self.delta_g < 0:
            raise ParameterError("delta_g must be non-negative")
        # zero field is the only case allowed to break delta_e > delta_g
        if not (self.delta_e > self.delta_g or self.delta_e == self.delta_g == 0):
            raise ParameterError("delta_e must exceed delta_g")
        if self.n_max_v < 1 or self.n_max_h < 1:
            raise ParameterError("Fock truncation n_max_v/n_max_h must be >= 1")
        if self.alpha < 0:
            raise ParameterError("alpha must be non-negative")
        b = self.branching
        if len(b) != 2 or min(b) < 0 or not math.isclose(sum(b), 1.0, abs_tol=1e-12):
            raise ParameterError("branching must be two non-negative weights summing to 1")

    @property
    def detuning(self) -> float:
        """Detuning of the |g+> -> |e+> pi transition seen by the drive.

        Returns ``delta_eff`` when it is set explicitly; otherwise the value
        implied by the level energies, delta_e - delta_g - delta_drive.
        """
        if self.delta_eff is not None:
            return self.delta_eff
        return self.delta_e - self.delta_g - self.delta_drive

    @property
    def structural_detuning(self) -> float:
        return self.delta_e - self.delta_g - self.delta_drive

    @property
    def photon_number(self) -> float:
        return self.alpha ** 2

    @property
    def dim(self) -> int:
        return 6 * (self.n_max_v + 1) * (self.n_max_h + 1)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    @classmethod
    def from_mhz(cls, **kw) -> "SystemParams":
        """Build from rates given in 2*pi*MHz (keys as in the dataclass)."""
        for name in ("g", "kappa", "gamma", "delta_g", "delta_e", "delta_drive", "delta_eff"):
            if name in kw and kw[name] is not None:
                kw[name] = mhz(kw[name])
        return cls(**kw)


@dataclass(frozen=True)
class LevelScheme:
    """Transition weights of the simplified F=1 -> F'=1 style scheme.

    ``pi`` couples g_m <-> e_m through the V mode. ``sigma_outer`` couples
    g0 <-> e+/- and ``sigma_inner`` couples g-/+ <-> e0, both through the H
    mode. Setting ``sigma_inner`` to zero leaves the two-term H lowering
    operator |g0><e+| + |g0><e-|.
    """

    pi: float = 1.0
    sigma_outer: float = 1.0
    sigma_inner: float = 1.0

    def transitions(self) -> list[tuple[str, str, str, float]]:
        """(lower, upper, polarization, weight) for every allowed line."""
        out = []
        for m in (-1, 0, 1):
            out.append((GROUND[m + 1], EXCITED[m + 1], "pi", self.pi))
        for lower, upper in (("g0", "e+"), ("g0", "e-")):
            pol = "sigma+" if MAGNETIC[upper] > MAGNETIC[lower] else "sigma-"
            out.append((lower, upper, pol, self.sigma_outer))
        for lower, upper in (("g-", "e0"), ("g+", "e0")):
            pol = "sigma+" if MAGNETIC[upper] > MAGNETIC[lower] else "sigma-"
            out.append((lower, upper, pol, self.sigma_inner))
        return out

    @classmethod
    def outer_only(cls) -> "LevelScheme":
        """Scheme whose H lowering operator is only |g0><e+| + |g0><e-|."""
        return cls(sigma_inner=0.0)
