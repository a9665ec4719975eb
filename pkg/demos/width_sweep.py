"""Light shift and dephasing from a sweep of gate widths.

For each width the gated g2 is matched to the continuous one by a time
shift and a scale. The phase grows linearly with the width at the light
shift; the log of the scale grows at the drive-induced dephasing rate.
"""
# %%
import math
import sys

from cqbeats import DetectionConfig, PulseProtocol, SystemParams, analytic, conditional_g2
from cqbeats.analysis import match_curves, regression_report, sweep_regression
from cqbeats.params import to_mhz

# optional: excited Zeeman splitting in MHz (2.83 default; 2.919 gives 0.037 MHz dephasing)
delta_e = float(sys.argv[1]) if len(sys.argv) > 1 else 2.83
p = SystemParams.from_mhz(delta_e=delta_e)
det = DetectionConfig(epsilon=0.3)
t_end = 5.2e-6

ref = conditional_g2(p, None, t_end, 1.64e-9, det)
fits = []
for w in (0.5e-6, 1e-6, 1.5e-6, 2e-6, 2.5e-6, 3e-6):
    pr = PulseProtocol(width=w, attenuation=0.0)
    curve = conditional_g2(p, pr, t_end, 1.64e-9, det)
    fit = match_curves(curve.tau, ref.g2, curve.g2, (pr.gate_off + 5 / p.kappa, t_end))
    fits.append((w, fit))
    print(f"width {w * 1e6:.1f} us: phase {fit.phase_shift:.3f} rad "
          f"(first order {analytic.predict_phase_shift(w, p):.3f}), scale {fit.scale:.3f} "
          f"(first order {analytic.amplitude_recovery(w, analytic.decoherence_rate(p)):.3f})")

# %%
print(regression_report(*sweep_regression(fits)))
print(f"first-order light shift {to_mhz(analytic.light_shift(p)):.4f} MHz, "
      f"dephasing {to_mhz(analytic.decoherence_rate(p)):.4f} MHz")
print(f"scale at 3 us = {fits[-1][1].scale:.2f}; e^(Gamma_decoh * 3 us) = "
      f"{math.exp(analytic.decoherence_rate(p) * 3e-6):.2f}")
