"""Regenerate the synthetic click streams used by the CLI golden test.

Each start click on APD_A is followed by stop clicks on APD_B whose rate
follows a decaying beat, 1 + A exp(-tau/T) cos(w tau + phi); the test stream
uses 1.3x the beat amplitude delayed by 40 ns. 2% of the gate copies are
omitted so the software filter has something to remove.

    python tests/data/make_fixture.py && cqbeats correlate ... (see test_cli.py)
"""
import math
from pathlib import Path

import numpy as np

from cqbeats.clickstream import APD_A, APD_B, GATE_COPY, ClickStream

HERE = Path(__file__).parent
W = 2 * math.pi * 2.4e6
SPAN = 4.8e-6
RATE = 2e6          # stop rate at g2 = 1, per second
N_STARTS = 4000


def g2(tau, delay=0.0, scale=1.0):
    u = tau - delay
    return 1 + scale * 0.4 * np.exp(-u / 3e-6) * np.cos(W * u + 0.3)


def stream(rng, **shape) -> ClickStream:
    starts = np.cumsum(rng.uniform(8e-6, 12e-6, N_STARTS))
    peak = RATE * 1.6 * 1.3
    t, ch = [starts], [np.full(N_STARTS, APD_A)]
    kept = rng.random(N_STARTS) >= 0.02
    t.append(starts[kept] + 325e-9)
    ch.append(np.full(kept.sum(), GATE_COPY))
    for s in starts:
        n = rng.poisson(peak * SPAN)
        tau = rng.uniform(0, SPAN, n)
        tau = tau[rng.random(n) * peak < RATE * g2(tau, **shape)]
        t.append(s + tau)
        ch.append(np.full(tau.size, APD_B))
    ticks = np.rint(np.concatenate(t) / 1e-12).astype(np.int64)
    chan = np.concatenate(ch).astype(np.uint8)
    return ClickStream(ticks, chan, np.zeros(ticks.size, np.uint8))


if __name__ == "__main__":
    rng = np.random.default_rng(2024)
    stream(rng).write_binary(HERE / "fixture_reference.bin")
    stream(rng, delay=40e-9, scale=1.3).write_binary(HERE / "fixture_feedback.bin")
