"""Drive-gating protocol and the delay-generator model that executes it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PulseProtocol:
    """Drive gate fired by a start-detector click.

    The drive is scaled by ``attenuation`` from ``trigger_delay + off_start``
    until ``trigger_delay + off_start + width`` after the click. After each
    accepted trigger the generator ignores further triggers for
    ``rearm_deadtime``.
    """

    trigger_delay: float = 325e-9
    off_start: float = 0.0
    width: float = 0.0
    attenuation: float = 0.0
    rearm_deadtime: float = 0.0

    def __post_init__(self):
        if self.trigger_delay < 0 or self.off_start < 0 or self.width < 0:
            raise ValueError("trigger_delay, off_start and width must be non-negative")
        if not 0.0 <= self.attenuation <= 1.0:
            raise ValueError("attenuation must lie in [0, 1]")
        if self.rearm_deadtime < 0:
            raise ValueError("rearm_deadtime must be non-negative")

    @property
    def gate_on(self) -> float:
        """Drive turn-off time relative to the trigger click."""
        return self.trigger_delay + self.off_start

    @property
    def gate_off(self) -> float:
        """Drive restoration time relative to the trigger click."""
        return self.gate_on + self.width

    @property
    def active(self) -> bool:
        return self.width > 0 and self.attenuation < 1.0

    def drive_scale(self, tau):
        """Drive scale a time tau after a single accepted trigger."""
        tau = np.asarray(tau, dtype=float)
        inside = (tau >= self.gate_on) & (tau < self.gate_off)
        return np.where(inside, self.attenuation, 1.0)

    @classmethod
    def no_feedback(cls, **kw) -> "PulseProtocol":
        return cls(width=0.0, attenuation=1.0, **kw)


def deadtime_for_missed_fraction(rate: float, fraction: float) -> float:
    """Dead time giving a missed-trigger fraction for Poisson triggers.

    Non-paralyzable dead time loses rate*T/(1 + rate*T) of the triggers.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    return fraction / ((1 - fraction) * rate)


def missed_fraction(rate: float, deadtime: float) -> float:
    x = rate * deadtime
    return x / (1 + x)


class GateController:
    """Online model of the delay generator.

    ``trigger(t)`` returns True when the click fires a gate. Accepted
    triggers open a drive window; the controller answers ``scale(t)`` for the
    drive at any later time.
    """

    def __init__(self, protocol: PulseProtocol):
        self.protocol = protocol
        self.busy_until = -math.inf
        self.windows: list[tuple[float, float]] = []
        self.log: list[tuple[float, bool]] = []

    def trigger(self, t: float) -> bool:
        ok = t >= self.busy_until
        self.log.append((t, ok))
        if ok:
            self.busy_until = t + self.protocol.rearm_deadtime
            if self.protocol.active:
                self.windows.append((t + self.protocol.gate_on, t + self.protocol.gate_off))
        return ok

    def scale(self, t: float) -> float:
        # drop windows that are over
        self.windows = [w for w in self.windows if w[1] > t]
        for start, end in self.windows:
            if start <= t < end:
                return self.protocol.attenuation
        return 1.0


def gate_triggers(times, protocol: PulseProtocol) -> np.ndarray:
    """Emitted-gate flags for a sorted array of trigger times (seconds)."""
    times = np.asarray(times, dtype=float)
    flags = np.zeros(times.size, dtype=bool)
    busy = -math.inf
    dead = protocol.rearm_deadtime
    for i, t in enumerate(times):
        if t >= busy:
            flags[i] = True
            busy = t + dead
    return flags


@dataclass(frozen=True)
class GateRecord:
    trigger_tick: int
    gate_emitted: bool
