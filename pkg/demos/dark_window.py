"""Switching the drive off freezes the ground-state coherence.

A single atom is driven continuously; 20 lifetimes after the trigger click
the drive is gated off for 80 lifetimes. In the dark the coherence only
precesses at the ground Zeeman frequency. When the drive comes back the beat
resumes with its pre-gate amplitude but lags the continuously driven trace
by the light shift it missed.
"""
# %%
import numpy as np

from cqbeats import analytic, conditional_g2
from cqbeats.config import load_config, preset_path
from cqbeats.params import to_mhz

cfg = load_config(preset_path("dark_window"))
p, pr = cfg.params, cfg.protocol
ref = conditional_g2(p, None, cfg.run.t_max, cfg.run.dt, cfg.detection, cfg.scheme)
fb = conditional_g2(p, pr, cfg.run.t_max, cfg.run.dt, cfg.detection, cfg.scheme)
print(f"drive off at {pr.gate_on * 1e6:.3f} us, back on at {pr.gate_off * 1e6:.3f} us")

# %% coherence during the dark window
dark = (fb.tau >= pr.gate_on + 10 / p.gamma) & (fb.tau <= pr.gate_off)
coh = fb.coherence[dark]
freq = abs(np.polyfit(fb.tau[dark], np.unwrap(np.angle(coh)), 1)[0])
print(f"|rho| drift in the dark: {np.ptp(np.abs(coh)) / np.abs(coh).mean():.2e}")
print(f"precession {to_mhz(freq):.4f} MHz  (ground Zeeman splitting {to_mhz(p.delta_g):.4f} MHz)")

# %% after the drive returns
at = lambda c, t: c.coherence[np.searchsorted(c.tau, t)]
t = pr.gate_off + 10 / p.gamma
print(f"|rho| restored / at switch-off: {abs(at(fb, pr.gate_off)) / abs(at(fb, pr.gate_on)):.4f}")
print(f"phase lag vs continuous drive: {np.angle(at(ref, t) / at(fb, t)):.3f} rad "
      f"(first-order estimate {analytic.predict_phase_shift(pr.width, p):.3f} rad)")

# %% a coarse look at both g2 traces
for tt in np.arange(0, cfg.run.t_max, 0.25e-6):
    i = np.searchsorted(ref.tau, tt)
    print(f"{tt * 1e6:5.2f} us  continuous {ref.g2[i]:6.3f}   gated {fb.g2[i]:6.3f}")
