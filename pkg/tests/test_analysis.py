import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqbeats.analysis import (AMPLITUDE_BIN, PHASE_BIN, BeatFit, FitError, ShiftAmbiguity,
                              beat_frequency, bin_for_purpose, envelope_fit, linear_regression,
                              match_curves, regression_report, sweep_regression, warn_if_coarse,
                              write_fit_table)
from cqbeats.clickstream import CorrelationHistogram

W = 2 * math.pi * 2.4e6      # beat angular frequency
PERIOD = 2 * math.pi / W
T = np.arange(0, 4.7e-6, 1.64e-9) + 0.82e-9
WINDOW = (0.5e-6, 4.5e-6)


def beat(t, delay=0.0, scale=1.0, level=1.0, amp=0.4, tau=3e-6):
    u = t - delay
    return level + scale * amp * np.exp(-u / tau) * np.cos(W * u + 0.3)


# --- beat frequency ------------------------------------------------------------------------

def test_beat_frequency_interpolates_between_fft_bins():
    f = beat_frequency(T, np.cos(2 * math.pi * 2.3456e6 * T))
    assert f / (2 * math.pi) == pytest.approx(2.3456e6, rel=2e-3)


# --- envelopes ------------------------------------------------------------------------------

def test_constant_amplitude_cosine_envelope():
    L, A = 2.0, 0.5
    y = L + A * np.cos(W * T)
    env = envelope_fit(T, y, WINDOW)
    t = np.linspace(*WINDOW, 50)
    assert np.allclose(env.upper_at(t), L + A, atol=2e-4)
    assert np.allclose(env.lower_at(t), L - A, atol=2e-4)
    assert np.allclose(env.mean_at(t), L, atol=2e-4)
    # t and t^2 coefficients vanish (per-microsecond scale)
    for coef in (env.upper, env.lower):
        assert abs(coef[0]) * 1e-12 < 1e-4 and abs(coef[1]) * 1e-6 < 1e-4


def test_decaying_cosine_mean_matches_level():
    y = beat(T)
    env = envelope_fit(T, y, WINDOW)
    t = np.linspace(*WINDOW, 50)
    assert np.all(np.abs(env.mean_at(t) - 1.0) < 0.02)
    true_amp = 0.4 * np.exp(-t / 3e-6)
    assert np.allclose(env.amplitude_at(t), true_amp, rtol=0.05)


def test_envelope_subtraction_zero_mean():
    # a decaying oscillation does not average to zero even over whole periods,
    # so the residual is compared with the oscillation's own mean
    window = (0.5e-6, 0.5e-6 + 9 * PERIOD)
    for level, kw in ((1.0, {}), (3.0, dict(amp=1.2, tau=1.5e-6))):
        y = beat(T, level=level, **kw)
        env = envelope_fit(T, y, window)
        m = (T >= window[0]) & (T <= window[1])
        resid = y[m] - env.mean_at(T[m])
        amp = np.ptp(y[m]) / 2
        assert abs(resid.mean() - (y[m] - level).mean()) < 0.01 * amp


def test_too_few_extrema():
    with pytest.raises(FitError):
        envelope_fit(T, beat(T), (0.5e-6, 0.5e-6 + 2 * PERIOD))


def test_flat_curve_rejected():
    with pytest.raises(FitError):
        envelope_fit(T, np.ones_like(T), WINDOW)


def test_window_order_checked():
    with pytest.raises(FitError):
        envelope_fit(T, beat(T), (2e-6, 1e-6))


def test_noisy_fine_bins_envelope(rng):
    y = rng.poisson(350 * beat(T)).astype(float)
    env = envelope_fit(T, y, WINDOW)
    # one maximum and one minimum per period
    assert env.maxima.shape[1] <= 11 and env.minima.shape[1] <= 11
    t = np.linspace(*WINDOW, 20)
    assert np.all(np.abs(env.mean_at(t) / 350 - 1) < 0.02)


# --- curve matching -------------------------------------------------------------------------

def test_identity_match():
    y = beat(T)
    f = match_curves(T, y, y, WINDOW)
    assert f.time_shift == pytest.approx(0.0, abs=1e-11)  # 10 ps: FFT round-off
    assert f.scale == pytest.approx(1.0, abs=1e-9)
    assert f.residual_rms == pytest.approx(0.0, abs=1e-9)


def test_scaled_and_delayed_copy():
    ref = beat(T)
    test = 1.0 + 1.3 * (beat(T, delay=40e-9) - 1.0)
    f = match_curves(T, ref, test, WINDOW)
    assert f.scale == pytest.approx(1.30, abs=0.02)
    assert f.time_shift == pytest.approx(40e-9, abs=2e-9)
    assert f.phase_shift == pytest.approx(W * 40e-9, rel=0.05)
    assert f.residual_rms < f.residual_rms_before


def test_differing_backgrounds_removed():
    ref = beat(T)
    test = 0.7 + 2.0e4 * T + 1.3 * (beat(T, delay=-25e-9) - 1.0)
    f = match_curves(T, ref, test, WINDOW)
    assert f.scale == pytest.approx(1.3, abs=0.02)
    assert f.time_shift == pytest.approx(-25e-9, abs=2e-9)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.5, 3.0), frac=st.floats(-0.45, 0.45))
def test_match_recovers_shift_and_scale(s, frac):
    d = frac * PERIOD
    ref = beat(T)
    test = 1.0 + s * (beat(T, delay=d) - 1.0)
    f = match_curves(T, ref, test, WINDOW)
    grid_step = PERIOD / 240
    assert abs(f.time_shift - d) < grid_step
    assert f.scale == pytest.approx(s, rel=grid_step * W)


def test_half_period_shift_is_ambiguous():
    ref = beat(T)
    with pytest.raises(ShiftAmbiguity):
        match_curves(T, ref, beat(T, delay=0.5 * PERIOD), WINDOW)


def test_inverted_curve_is_not_a_match():
    ref = beat(T)
    with pytest.raises(FitError):
        match_curves(T, ref, 2.0 - ref, WINDOW)


def test_mismatched_axes():
    with pytest.raises(FitError):
        match_curves(T, beat(T), beat(T)[:-1], WINDOW)


def test_error_estimates_track_noise(rng):
    ref = beat(T)
    fits = []
    for _ in range(30):
        test = 1.0 + 1.3 * (beat(T, delay=40e-9) - 1.0) + rng.normal(0, 0.02, T.size)
        fits.append(match_curves(T, ref, test, WINDOW))
    shifts = np.array([f.time_shift for f in fits])
    reported = np.mean([f.time_shift_err for f in fits])
    assert 0.5 < shifts.std() / reported < 2.0


def test_report_is_key_value():
    f = match_curves(T, beat(T), beat(T, delay=10e-9), WINDOW)
    lines = f.report().splitlines()
    keys = [ln.split(" = ")[0] for ln in lines]
    assert {"time_shift_ns", "phase_shift_rad", "scale", "window_start_us"} <= set(keys)


def test_beatfit_invariants():
    with pytest.raises(FitError):
        BeatFit(0, 0, 1.0, 0, (2e-6, 1e-6), 1e-9, W)
    with pytest.raises(FitError):
        BeatFit(0, 0, 0.0, 0, (1e-6, 2e-6), 1e-9, W)


def test_fine_bins_extract_phase_better():
    """Repeated shot-noise draws; the 16.4 ns curve is the exact rebin of the
    1.64 ns one, so the comparison is paired."""
    rng = np.random.default_rng(7)
    edges = np.arange(0, 4.7e-6 + 0.82e-9, 1.64e-9)
    tc = 0.5 * (edges[1:] + edges[:-1])
    n = tc.size // 10 * 10
    tc = tc[:n]
    coarse_t = tc.reshape(-1, 10).mean(axis=1)
    truth = W * 40e-9
    err = {1.64: [], 16.4: []}
    for _ in range(100):
        ref = rng.poisson(350 * beat(tc))
        test = rng.poisson(350 * (1 + 1.3 * (beat(tc, delay=40e-9) - 1)))
        err[1.64].append(match_curves(tc, ref, test, WINDOW).phase_shift - truth)
        err[16.4].append(match_curves(coarse_t, ref.reshape(-1, 10).sum(1),
                                      test.reshape(-1, 10).sum(1), WINDOW).phase_shift - truth)
    rms = {k: math.sqrt(np.mean(np.square(v))) for k, v in err.items()}
    assert rms[1.64] < rms[16.4]


# --- regression -----------------------------------------------------------------------------

def _fit(phase, scale, perr=0.01, serr=0.01):
    return BeatFit(phase / W, phase, scale, 0.0, WINDOW, 1.64e-9, W, perr / W, perr, serr)


def test_regression_exact_on_model_data():
    light, decoh = 2 * math.pi * 0.073e6, 2 * math.pi * 0.037e6
    widths = np.array([0.5, 1, 1.5, 2, 2.5, 3]) * 1e-6
    fits = [(w, _fit(light * w, math.exp(decoh * w))) for w in widths]
    ph, ls = sweep_regression(fits)
    assert ph.slope == pytest.approx(light, rel=1e-9)
    assert ls.slope == pytest.approx(decoh, rel=1e-9)
    assert abs(ph.intercept) < 1e-9 and abs(ls.intercept) < 1e-9
    assert ph.slope_err >= 0 and ls.slope_err >= 0
    assert np.allclose(ph.predict(widths), light * widths)


def test_regression_with_offset_and_weights(rng):
    x = np.linspace(0, 1, 8)
    y = 0.3 + 2.0 * x
    r = linear_regression(x, y, yerr=np.linspace(0.1, 0.5, 8))
    assert r.slope == pytest.approx(2.0, rel=1e-9)
    assert r.intercept == pytest.approx(0.3, rel=1e-9)
    noisy = y + rng.normal(0, 0.05, 8)
    r = linear_regression(x, noisy, yerr=np.full(8, 0.05))
    assert abs(r.slope - 2.0) < 4 * r.slope_err


def test_regression_needs_three_points():
    with pytest.raises(FitError):
        linear_regression([1, 2], [1, 2])
    with pytest.raises(FitError):
        sweep_regression([(1e-6, _fit(0.1, 1.1))] * 2)


def test_fit_table_and_report(tmp_path):
    fits = [(w, _fit(0.4 * w * 1e6, 1 + 0.2 * w * 1e6)) for w in (1e-6, 2e-6, 3e-6)]
    path = tmp_path / "fits.csv"
    write_fit_table(path, fits)
    rows = path.read_text().splitlines()
    assert rows[0].startswith("width_us,phase_rad")
    assert len(rows) == 4
    text = regression_report(*sweep_regression(fits))
    assert "light_shift_mhz = " in text and "decoherence_mhz = " in text


# --- binning --------------------------------------------------------------------------------

def _hist(bin_ticks, n, rng):
    return CorrelationHistogram(bin_ticks=bin_ticks, lags=np.arange(n) * bin_ticks,
                                counts=rng.poisson(40, n), exposure=np.full(n, 1000.0),
                                n_starts=1000, stop_rate=40 / (1000 * bin_ticks * 1e-12))


def test_bin_for_purpose(rng):
    h = _hist(1640, 3000, rng)
    amp = bin_for_purpose(h, "amplitude")
    assert amp.bin_width == pytest.approx(AMPLITUDE_BIN)
    assert np.array_equal(amp.counts, h.counts.reshape(-1, 10).sum(axis=1))
    assert int(amp.counts.sum()) == int(h.counts.sum())
    assert bin_for_purpose(h, "phase").bin_width == pytest.approx(PHASE_BIN)
    with pytest.raises(FitError):
        bin_for_purpose(_hist(1000, 100, rng), "phase")
    with pytest.raises(FitError):
        bin_for_purpose(amp, "phase")
    with pytest.raises(ValueError):
        bin_for_purpose(h, "colour")


def test_coarse_bins_warn_for_phase():
    with pytest.warns(UserWarning, match="1.64 ns"):
        warn_if_coarse(16.4e-9, "phase")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        warn_if_coarse(1.64e-9, "phase")
        warn_if_coarse(16.4e-9, "amplitude")
