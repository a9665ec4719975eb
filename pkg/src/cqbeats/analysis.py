"""Beat extraction: envelopes, shift-and-scale matching, sweep regressions."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .clickstream import CorrelationHistogram, rebin

PHASE_BIN = 1.64e-9
AMPLITUDE_BIN = 16.4e-9
TEMPLATE_CUTOFF = 4.0  # low-pass corner, in units of the beat frequency
FINE_BINS_PER_PERIOD = 60  # above this, extrema are picked on a low-passed curve


class FitError(ValueError):
    pass


class ShiftAmbiguity(FitError):
    """Best shift sits on the edge of the +/- half-period search range."""


def _window_mask(t: np.ndarray, window) -> np.ndarray:
    lo, hi = window
    if not lo < hi:
        raise FitError("window start must precede its end")
    m = (t >= lo) & (t <= hi)
    if m.sum() < 8:
        raise FitError("window holds too few samples")
    return m


def beat_frequency(t: np.ndarray, y: np.ndarray, pad: int = 16) -> float:
    """Angular frequency of the dominant oscillation (Hann window, zero padding,
    quadratic interpolation of the spectral peak)."""
    t = np.asarray(t, float)
    y = np.asarray(y, float) - np.mean(y)
    dt = float(np.median(np.diff(t)))
    n = y.size
    spec = np.abs(np.fft.rfft(y * np.hanning(n), n * pad))
    spec[0] = 0.0
    k = int(np.argmax(spec))
    if 0 < k < spec.size - 1:
        a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
        den = a - 2 * b + c
        k = k + (0.5 * (a - c) / den if den != 0 else 0.0)
    return 2 * math.pi * k / (n * pad * dt)


@dataclass(frozen=True)
class Envelope:
    upper: np.ndarray
    lower: np.ndarray
    t_ref: float
    maxima: np.ndarray
    minima: np.ndarray

    def _ev(self, coef, t):
        return np.polyval(coef, np.asarray(t, float) - self.t_ref)

    def upper_at(self, t):
        return self._ev(self.upper, t)

    def lower_at(self, t):
        return self._ev(self.lower, t)

    def mean_at(self, t):
        return 0.5 * (self.upper_at(t) + self.lower_at(t))

    def amplitude_at(self, t):
        return 0.5 * (self.upper_at(t) - self.lower_at(t))


def _refine_extrema(y: np.ndarray, idx: np.ndarray, t: np.ndarray):
    """Vertex of the parabola through each extremum and its neighbours."""
    idx = idx[(idx > 0) & (idx < y.size - 1)]
    a, b, c = y[idx - 1], y[idx], y[idx + 1]
    den = a - 2 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, 0.5 * (a - c) / den, 0.0)
    off = np.clip(off, -0.5, 0.5)
    dt = np.median(np.diff(t))
    return t[idx] + off * dt, b - 0.25 * (a - c) * off


def _lowpass(t: np.ndarray, y: np.ndarray, cutoff: float) -> np.ndarray:
    """exp(-(f/fc)^8) low-pass of a uniformly sampled curve (even extension)."""
    ext = np.concatenate([y, y[::-1]])
    spec = np.fft.rfft(ext)
    freq = 2 * math.pi * np.fft.rfftfreq(ext.size, float(np.median(np.diff(t))))
    return np.fft.irfft(spec * np.exp(-((freq / cutoff) ** 8)), ext.size)[:y.size]


def envelope_fit(t, y, window=None, smooth: int = 3, min_extrema: int = 3) -> Envelope:
    """Quadratic fits through the maxima and the minima of an oscillation.

    Extrema are picked after a ``smooth``-bin moving average; the upper and
    lower polynomials are evaluated relative to the window start.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    m = _window_mask(t, window if window is not None else (t[0], t[-1]))
    tw, yw = t[m], y[m]
    if np.ptp(yw) <= 1e-12 * max(1.0, np.abs(yw).max()):
        raise FitError("curve is flat; no oscillation to fit")
    omega = beat_frequency(tw, yw)
    per_bins = 2 * math.pi / omega / np.median(np.diff(tw))
    ys = np.convolve(yw, np.ones(smooth) / smooth, mode="same") if smooth > 1 else yw
    if smooth > 1:
        h = smooth // 2
        ys[:h], ys[-h:] = yw[:h], yw[-h:]
    if per_bins > FINE_BINS_PER_PERIOD and np.allclose(np.diff(t), t[1] - t[0], rtol=1e-6):
        # fine bins: a few-bin average leaves most of the shot noise, which
        # biases the extremum values; low-pass well above the beat instead
        # (the whole curve, so filter edge effects stay outside the window)
        ys = _lowpass(t, y, TEMPLATE_CUTOFF * omega)[m]
    # at most one maximum (minimum) per beat period: shot noise would
    # otherwise add spurious extrema between the true ones
    dist = max(1, int(0.6 * per_bins))
    imax, _ = find_peaks(ys, distance=dist)
    imin, _ = find_peaks(-ys, distance=dist)
    if imax.size < min_extrema or imin.size < min_extrema:
        raise FitError(f"need >= {min_extrema} maxima and minima in the window "
                       f"(found {imax.size} and {imin.size})")
    tmax, vmax = _refine_extrema(ys, imax, tw)
    tmin, vmin = _refine_extrema(ys, imin, tw)
    t0 = float(tw[0])
    deg_u = min(2, tmax.size - 1)
    deg_l = min(2, tmin.size - 1)
    up = np.polyfit(tmax - t0, vmax, deg_u)
    lo = np.polyfit(tmin - t0, vmin, deg_l)
    up = np.concatenate([np.zeros(3 - up.size), up])
    lo = np.concatenate([np.zeros(3 - lo.size), lo])
    return Envelope(up, lo, t0, np.stack([tmax, vmax]), np.stack([tmin, vmin]))


@dataclass(frozen=True)
class BeatFit:
    time_shift: float
    phase_shift: float
    scale: float
    residual_rms: float
    fit_window: tuple[float, float]
    bin_width: float
    omega: float
    time_shift_err: float = 0.0
    phase_err: float = 0.0
    scale_err: float = 0.0
    residual_rms_before: float = 0.0

    def __post_init__(self):
        if not self.fit_window[0] < self.fit_window[1]:
            raise FitError("fit window must have t_start < t_end")
        if not self.scale > 0:
            raise FitError("fitted scale is not positive")

    def report(self) -> str:
        rows = [
            ("time_shift_ns", self.time_shift * 1e9), ("time_shift_err_ns", self.time_shift_err * 1e9),
            ("phase_shift_rad", self.phase_shift), ("phase_err_rad", self.phase_err),
            ("scale", self.scale), ("scale_err", self.scale_err),
            ("omega_beat_mhz", self.omega / (2 * math.pi) / 1e6),
            ("residual_rms", self.residual_rms), ("residual_rms_before", self.residual_rms_before),
            ("window_start_us", self.fit_window[0] * 1e6), ("window_end_us", self.fit_window[1] * 1e6),
            ("bin_width_ns", self.bin_width * 1e9),
        ]
        return "".join(f"{k} = {v:.6g}\n" for k, v in rows)


def _detrended(t, y, env: Envelope):
    return np.asarray(y, float) - env.mean_at(t)


def _shifter(t: np.ndarray, y: np.ndarray, mask: np.ndarray, cutoff: float | None = None):
    """Return d -> y(t - d) on t[mask].

    On a uniform grid the shift is applied in the Fourier domain to the even
    extension of y, optionally low-passed with a steep exp(-(f/fc)^8) roll-off at angular
    frequency ``cutoff``. Linear interpolation of a noisy template makes the
    noise depend on the fractional-bin offset, and an unfiltered template
    correlates its bin-scale noise with the test curve's; both jitter the
    best shift far more on fine bins than on coarse ones.
    """
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        return lambda d: np.interp(t[mask] - d, t, y)
    ext = np.concatenate([y, y[::-1]])
    spec = np.fft.rfft(ext)
    freq = 2 * math.pi * np.fft.rfftfreq(ext.size, dt[0])
    if cutoff is not None:
        spec = spec * np.exp(-((freq / cutoff) ** 8))
    n = y.size

    def shift(d):
        return np.fft.irfft(spec * np.exp(-1j * freq * d), ext.size)[:n][mask]
    return shift


def match_curves(t, reference, test, window, n_grid: int = 241, omega: float | None = None,
                 min_extrema: int = 3) -> BeatFit:
    """Fit test(t) ~ scale * reference(t - shift) after removing both mean envelopes.

    The shift is searched on a grid over +/- half a beat period and refined
    by a parabola through the best three points; a best point on the grid
    edge raises :class:`ShiftAmbiguity`. The phase shift is shift * omega,
    omega being the reference beat frequency unless given.
    """
    t = np.asarray(t, float)
    reference = np.asarray(reference, float)
    test = np.asarray(test, float)
    if not (t.shape == reference.shape == test.shape):
        raise FitError("curves must share the same time axis")
    m = _window_mask(t, window)
    env_r = envelope_fit(t, reference, window, min_extrema=min_extrema)
    env_x = envelope_fit(t, test, window, min_extrema=min_extrema)
    r_full = _detrended(t, reference, env_r)
    x_raw = _detrended(t, test, env_x)[m]
    tw = t[m]
    w = omega if omega is not None else beat_frequency(tw, r_full[m])
    half = math.pi / w
    dt = float(np.median(np.diff(t)))

    shifted = _shifter(t, r_full, m, TEMPLATE_CUTOFF * w)
    # the test curve passes through the same filter, so identical curves match exactly
    x = _shifter(t, _detrended(t, test, env_x), m, TEMPLATE_CUTOFF * w)(0.0)

    def sse_scale(d):
        # scale constrained to s >= 0: an inverted reference is not a match
        rd = shifted(d)
        xr = x @ rd
        s = max(xr, 0.0) / (rd @ rd)
        return x @ x - s * xr, s

    grid = np.linspace(-half, half, n_grid)
    sse = np.array([sse_scale(d)[0] for d in grid])
    k = int(np.argmin(sse))
    if k == 0 or k == n_grid - 1:
        raise ShiftAmbiguity("best shift lies at the +/- half-period boundary")
    a, b, c = sse[k - 1:k + 2]
    den = a - 2 * b + c
    step = grid[1] - grid[0]
    d = grid[k] + (0.5 * (a - c) / den * step if den > 0 else 0.0)
    polish = minimize_scalar(lambda u: sse_scale(u)[0], bounds=(grid[k - 1], grid[k + 1]),
                             method="bounded", options={"xatol": 1e-6 * step})
    if polish.success and polish.fun <= sse_scale(d)[0]:
        d = float(polish.x)
    _, s = sse_scale(d)
    if s <= 0:
        raise FitError("test curve is anti-correlated with the reference")
    n = x.size
    rd = shifted(d)
    sse_d = float(np.sum((x - s * rd) ** 2))  # direct sum: x.x - s x.r cancels near a perfect match
    deriv = np.gradient(rd, tw)
    J = np.stack([-s * deriv, rd], axis=1)
    # noise level from the unfiltered residual; the filtered one hides out-of-band noise
    sigma2 = float(np.sum((x_raw - s * rd) ** 2)) / max(n - 2, 1)
    try:
        cov = sigma2 * np.linalg.inv(J.T @ J)
        d_err, s_err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        d_err = s_err = float("nan")
    return BeatFit(time_shift=float(d), phase_shift=float(d * w), scale=float(s),
                   residual_rms=float(math.sqrt(sse_d / n)), fit_window=(float(window[0]), float(window[1])),
                   bin_width=dt, omega=float(w), time_shift_err=float(d_err),
                   phase_err=float(d_err * w), scale_err=float(s_err),
                   residual_rms_before=float(math.sqrt(np.mean((x - r_full[m]) ** 2))))


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    slope_err: float
    intercept: float
    intercept_err: float
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    yerr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.slope_err < 0 or self.intercept_err < 0:
            raise ValueError("standard errors must be non-negative")

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x, float)


def linear_regression(x, y, yerr=None) -> RegressionResult:
    """Weighted straight-line fit; errors scaled by the reduced chi-square."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 3:
        raise FitError("regression needs at least 3 points")
    if yerr is not None:
        yerr = np.asarray(yerr, float)
        use_w = np.all(np.isfinite(yerr)) and np.all(yerr > 0)
    else:
        use_w = False
    wts = 1.0 / yerr**2 if use_w else np.ones_like(x)
    X = np.stack([np.ones_like(x), x], axis=1)
    XtW = X.T * wts
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    res = y - X @ beta
    chi2 = float(res @ (wts * res)) / (x.size - 2)
    err = np.sqrt(np.clip(np.diag(cov) * chi2, 0, None))
    return RegressionResult(slope=float(beta[1]), slope_err=float(err[1]),
                            intercept=float(beta[0]), intercept_err=float(err[0]),
                            x=x, y=y, yerr=yerr)


def sweep_regression(fits) -> tuple[RegressionResult, RegressionResult]:
    """Phase and ln(scale) against pulse width.

    ``fits`` is a sequence of (width, BeatFit). The slopes estimate the
    light shift and the drive-induced decoherence rate.
    """
    fits = list(fits)
    if len(fits) < 3:
        raise FitError("sweep regression needs at least 3 widths")
    w = np.array([f[0] for f in fits], float)
    ph = np.array([f[1].phase_shift for f in fits])
    ph_e = np.array([f[1].phase_err for f in fits])
    ls = np.log([f[1].scale for f in fits])
    ls_e = np.array([f[1].scale_err / f[1].scale for f in fits])
    return linear_regression(w, ph, ph_e), linear_regression(w, ls, ls_e)


def write_fit_table(path, fits) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["width_us", "phase_rad", "phase_err_rad", "scale", "scale_err",
                     "time_shift_ns"])
        for width, f in fits:
            wr.writerow([f"{width * 1e6:.6g}", f"{f.phase_shift:.6g}", f"{f.phase_err:.6g}",
                         f"{f.scale:.6g}", f"{f.scale_err:.6g}", f"{f.time_shift * 1e9:.6g}"])


def regression_report(phase: RegressionResult, log_scale: RegressionResult) -> str:
    tp = 2 * math.pi * 1e6
    rows = [
        ("light_shift_mhz", phase.slope / tp), ("light_shift_err_mhz", phase.slope_err / tp),
        ("phase_intercept_rad", phase.intercept), ("phase_intercept_err_rad", phase.intercept_err),
        ("decoherence_mhz", log_scale.slope / tp), ("decoherence_err_mhz", log_scale.slope_err / tp),
        ("log_scale_intercept", log_scale.intercept),
        ("log_scale_intercept_err", log_scale.intercept_err),
    ]
    return "".join(f"{k} = {v:.6g}\n" for k, v in rows)


def bin_for_purpose(hist: CorrelationHistogram, purpose: str) -> CorrelationHistogram:
    """Rebin to 1.64 ns for phase work or 16.4 ns for amplitude work."""
    target = {"phase": PHASE_BIN, "amplitude": AMPLITUDE_BIN}.get(purpose)
    if target is None:
        raise ValueError("purpose must be 'phase' or 'amplitude'")
    tt = int(round(target / 1e-12))
    if tt % hist.bin_ticks:
        raise FitError(f"{hist.bin_ticks} ps bins do not divide {tt} ps")
    factor = tt // hist.bin_ticks
    n = hist.counts.size - hist.counts.size % factor
    if n != hist.counts.size:
        hist = CorrelationHistogram(hist.bin_ticks, hist.lags[:n], hist.counts[:n],
                                    hist.exposure[:n], hist.n_starts, hist.stop_rate,
                                    hist.background_level, hist.suppressed, hist.mode, hist.meta)
    return rebin(hist, factor) if factor > 1 else hist


def warn_if_coarse(bin_width: float, purpose: str = "phase") -> None:
    if purpose == "phase" and bin_width > 2 * PHASE_BIN:
        warnings.warn(f"{bin_width * 1e9:.3g} ns bins blur the phase shift; "
                      "use 1.64 ns bins for phase extraction", stacklevel=2)
