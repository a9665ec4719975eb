"""Command-line front end: predict, simulate, correlate, analyze, sweep."""
from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analytic
from .analysis import (FitError, PHASE_BIN, match_curves, regression_report,
                       sweep_regression, warn_if_coarse, write_fit_table)
from .clickstream import (ClickStream, CorrelationHistogram, StreamError, correlate,
                          estimate_dark_level, filter_triggered, rebin, subtract_background)
from .config import ConfigError, RunConfig, load_config, parse_bin
from .engine.master import SolverDivergence, TruncationOverflow, conditional_g2
from .engine.trajectories import SeedError, gate_copy_log, run_trajectories
from .params import mhz, to_mhz

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _window(raw: str) -> tuple[float, float]:
    parts = [float(x) for x in raw.split(",")]
    if len(parts) != 2 or not parts[0] < parts[1]:
        raise argparse.ArgumentTypeError("expected START,END in microseconds with START < END")
    return parts[0] * 1e-6, parts[1] * 1e-6


def _bin(raw: str) -> float:
    try:
        return parse_bin(raw)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _out(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out or (cfg.run.output_dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config", "a configuration file is required")
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    return cfg


# ---------------------------------------------------------------- predict
def cmd_predict(args) -> int:
    cfg = _config(args)
    rows = []
    if cfg.predict_sweep is None or not cfg.predict_sweep[1]:
        rows.append(_predict_row(cfg, cfg.params))
    else:
        key, values = cfg.predict_sweep
        for v in values:
            if key == "photon_number":
                p = cfg.params.with_(alpha=math.sqrt(v))
            elif key == "alpha":
                p = cfg.params.with_(alpha=v)
            else:
                p = cfg.params.with_(**{key: mhz(v)})
            rows.append(_predict_row(cfg, p))
    path = _out(args, cfg) / "predictions.csv"
    analytic.write_prediction_table(path, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def _predict_row(cfg: RunConfig, p) -> dict:
    row = analytic.prediction_row(p)
    w = cfg.protocol.width
    row["width_us"] = w * 1e6
    row["phase_shift_rad"] = analytic.predict_phase_shift(w, p)
    row["amplitude_scale"] = analytic.amplitude_recovery(w, analytic.decoherence_rate(p))
    return row


# ---------------------------------------------------------------- simulate
def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    r = cfg.run
    ref = conditional_g2(cfg.params, None, r.t_max, r.dt, cfg.detection, cfg.scheme)
    ref.to_csv(out / "g2_reference.csv")
    written = ["g2_reference.csv"]
    if cfg.protocol.active:
        fb = conditional_g2(cfg.params, cfg.protocol, r.t_max, r.dt, cfg.detection, cfg.scheme)
        fb.to_csv(out / "g2_feedback.csv")
        written.append("g2_feedback.csv")
        _dark_summary(cfg, ref, fb, out / "summary.txt")
        written.append("summary.txt")
    if r.n_traj > 0:
        detection = cfg.detection
        if detection.mode != "cavity":
            raise ConfigError("detection.mode", "trajectory runs need mode = cavity")
        run = run_trajectories(cfg.params, cfg.protocol, detection, r.duration, r.n_traj,
                               r.seed, cfg.scheme, dt=r.mc_step, batch=r.batch,
                               workers=r.workers)
        run.stream.write_binary(out / "clicks.bin")
        with open(out / "gate_log.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trigger_tick", "gate_emitted"])
            w.writerows((t, int(ok)) for t, ok in gate_copy_log(run))
        written += ["clicks.bin", "gate_log.csv"]
        print(f"trajectories: {r.n_traj}, clicks: {len(run.stream)}, "
              f"missed triggers: {run.missed_fraction:.4f}")
    print("wrote " + ", ".join(str(out / w) for w in written))
    return EXIT_OK


def _dark_summary(cfg: RunConfig, ref, fb, path) -> None:
    pr = cfg.protocol
    h = fb.step
    on, off = pr.gate_on, pr.gate_off
    m = (fb.tau >= on + 10 / cfg.params.gamma) & (fb.tau <= off)
    lines = {"gate_on_us": on * 1e6, "gate_off_us": off * 1e6, "step_ns": h * 1e9}
    if m.sum() > 2:
        coh = fb.coherence[m]
        drift = np.ptp(np.abs(coh)) / np.abs(coh).mean()
        freq = np.polyfit(fb.tau[m], np.unwrap(np.angle(coh)), 1)[0]
        lines["dark_coherence_drift"] = drift
        lines["dark_precession_mhz"] = to_mhz(freq)
        lines["delta_g_mhz"] = to_mhz(cfg.params.delta_g)
    i = np.searchsorted(fb.tau, min(off + 10 / cfg.params.gamma, fb.tau[-1]))
    lines["phase_offset_rad"] = float(np.angle(ref.coherence[i] / fb.coherence[i]))
    lines["predicted_phase_offset_rad"] = analytic.predict_phase_shift(pr.width, cfg.params)
    lines["coherence_ratio"] = float(abs(fb.coherence[i]) / abs(ref.coherence[i]))
    with open(path, "w") as fh:
        fh.writelines(f"{k} = {v:.6g}\n" for k, v in lines.items())


# ---------------------------------------------------------------- correlate
def cmd_correlate(args) -> int:
    cfg = load_config(args.config) if args.config else None
    bin_width = args.bin or (cfg.analysis.bin_width if cfg else PHASE_BIN)
    t_max = args.t_max * 1e-6 if args.t_max else (cfg.run.t_max if cfg else 4.7e-6)
    delay = cfg.protocol.trigger_delay if cfg else args.trigger_delay * 1e-9
    use_filter = (args.filter == "on") if args.filter else (cfg.analysis.filter if cfg else True)
    dark = args.dark or (cfg.analysis.dark_window if cfg else None)
    out = _out(args, cfg)
    for src in args.streams:
        path = Path(src)
        if not path.exists():
            raise UsageError(f"streams: no such file {path}")
        stream = ClickStream.read(path)
        if use_filter:
            try:
                stream = filter_triggered(stream, trigger_delay=delay)
            except StreamError as exc:
                raise UsageError(f"--filter: {exc} ({path.name})") from None
        hist = correlate(stream, bin_width, t_max)
        if dark is not None:
            hist = subtract_background(hist, estimate_dark_level(hist, *dark))
        dest = out / f"{path.stem}_hist.csv"
        hist.to_csv(dest)
        print(f"wrote {dest} ({int(hist.counts.sum())} pairs, {hist.counts.size} bins)")
    return EXIT_OK


# ---------------------------------------------------------------- analyze
def read_curve(path, bin_width: float | None = None,
               per_start: bool = False) -> tuple[np.ndarray, np.ndarray, float]:
    """(tau, g2, bin width) from a histogram CSV or a deterministic curve CSV.

    With ``per_start`` a histogram gives counts per start per bin instead of
    g2; gated runs have a lower mean stop rate, which inflates their g2.
    """
    path = Path(path)
    if not path.exists():
        raise UsageError(f"curves: no such file {path}")
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("#"):
        hist = CorrelationHistogram.read_csv(path)
        if bin_width:
            bt = int(round(bin_width / 1e-12))
            if bt % hist.bin_ticks:
                raise UsageError(f"--bin: {bin_width * 1e9:g} ns is not a multiple of "
                                 f"the histogram bins ({hist.bin_ticks / 1e3:g} ns)")
            f = bt // hist.bin_ticks
            n = hist.counts.size - hist.counts.size % f
            hist = rebin(replace(hist, lags=hist.lags[:n], counts=hist.counts[:n],
                                 exposure=hist.exposure[:n]), f)
        if per_start:
            return hist.tau, hist.counts / np.maximum(hist.exposure, 1), hist.bin_width
        return hist.tau, hist.g2, hist.bin_width
    if per_start:
        raise UsageError(f"--per-start: {path.name} is not a click histogram")
    data = np.genfromtxt(path, delimiter=",", names=True)
    tau = data["tau_ns"] * 1e-9
    g2 = data["g2"]
    dt = float(np.median(np.diff(tau)))
    if bin_width:
        f = int(round(bin_width / dt))
        if f < 1 or abs(f * dt - bin_width) > 1e-3 * bin_width:
            raise UsageError(f"--bin: {bin_width * 1e9:g} ns is not a multiple of the "
                             f"curve spacing ({dt * 1e9:g} ns)")
        n = (g2.size // f) * f
        g2 = g2[:n].reshape(-1, f).mean(axis=1)
        tau = tau[:n:f] + 0.5 * (f - 1) * dt
        dt = f * dt
    return tau, g2, dt


def cmd_analyze(args) -> int:
    cfg = load_config(args.config) if args.config else None
    bin_width = args.bin
    t_r, ref, dt_r = read_curve(args.reference, bin_width, args.per_start)
    t_x, test, dt_x = read_curve(args.test, bin_width, args.per_start)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        warn_if_coarse(dt_r, args.purpose)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    n = min(t_r.size, t_x.size)
    if not np.allclose(t_r[:n], t_x[:n], atol=1e-3 * dt_r):
        raise UsageError("curves: reference and test use different binning")
    window = args.window or (cfg.analysis.window if cfg else None)
    if window is None:
        raise UsageError("--window: required when the config has no analysis.window_us")
    fit = match_curves(t_r[:n], ref[:n], test[:n], window)
    out = _out(args, cfg)
    dest = out / (args.name or "fit_report.txt")
    with open(dest, "w") as fh:
        fh.write(f"reference = {Path(args.reference).name}\n")
        fh.write(f"test = {Path(args.test).name}\n")
        fh.write(f"purpose = {args.purpose}\n")
        fh.write(fit.report())
    print(f"wrote {dest}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep
def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    r, a = cfg.run, cfg.analysis
    t_end = a.window[1] if a.window else r.t_max
    ref = conditional_g2(cfg.params, None, t_end, r.dt, cfg.detection, cfg.scheme)
    fits = []
    att = cfg.protocol.attenuation if cfg.protocol.attenuation < 1 else 0.0
    for width in a.sweep_widths:
        pr = replace(cfg.protocol, width=width, attenuation=att)
        curve = conditional_g2(cfg.params, pr, t_end, r.dt, cfg.detection, cfg.scheme)
        window = (pr.gate_off + a.settle, t_end)
        fit = match_curves(curve.tau, ref.g2, curve.g2, window)
        fits.append((width, fit))
        print(f"width {width * 1e6:.2f} us: phase {fit.phase_shift:.4f} rad, "
              f"scale {fit.scale:.4f}")
    phase, log_scale = sweep_regression(fits)
    write_fit_table(out / "sweep_fits.csv", fits)
    p = cfg.params
    with open(out / "sweep_report.txt", "w") as fh:
        fh.write(regression_report(phase, log_scale))
        fh.write(f"analytic_light_shift_mhz = {to_mhz(analytic.light_shift(p)):.6g}\n")
        fh.write(f"analytic_decoherence_mhz = {to_mhz(analytic.decoherence_rate(p)):.6g}\n")
        fh.write("experimental_light_shift_mhz = 0.073 +/- 0.004\n")
        fh.write("experimental_decoherence_mhz = 0.037 +/- 0.001\n")
    print(f"wrote {out / 'sweep_fits.csv'}, {out / 'sweep_report.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cqbeats", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI configuration file")
        p.add_argument("--out", help="output directory (default: run.output_dir)")

    p = sub.add_parser("predict", help="analytic shifts and rates as CSV")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="deterministic g2 curves and trajectory click streams")
    common(p)
    p.add_argument("--seed", type=int, help="override run.seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="click streams -> g2 histogram CSV")
    common(p, config_required=False)
    p.add_argument("streams", nargs="+", help="stream files (.bin or .csv)")
    p.add_argument("--bin", type=_bin, help="1.64ns, 16.4ns or any <n>ns")
    p.add_argument("--filter", choices=("on", "off"), help="drop starts without gate copies")
    p.add_argument("--dark", type=_window, help="START,END (us) lag window used as zero level")
    p.add_argument("--t-max", type=float, help="largest lag in us (default 4.7)")
    p.add_argument("--trigger-delay", type=float, default=325.0,
                   help="gate-copy delay in ns when no config is given")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("analyze", help="fit time shift and scale between two curves")
    common(p, config_required=False)
    p.add_argument("reference", help="no-feedback curve (histogram or g2 CSV)")
    p.add_argument("test", help="feedback curve")
    p.add_argument("--window", type=_window, help="fit window START,END in us")
    p.add_argument("--bin", type=_bin, help="rebin inputs to this width first")
    p.add_argument("--purpose", choices=("phase", "amplitude"), default="phase")
    p.add_argument("--name", help="report file name (default fit_report.txt)")
    p.add_argument("--per-start", action="store_true",
                   help="fit clicks per start instead of g2 (histograms of gated runs)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="pulse-width sweep and regressions")
    common(p)
    p.add_argument("--seed", type=int, help="override run.seed")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, StreamError, SeedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TruncationOverflow, SolverDivergence, FitError, analytic.TruncationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
