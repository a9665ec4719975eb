"""INI run configuration.

Rates are written in 2*pi*MHz, times in the unit named by the key suffix
(``_us`` or ``_ns``). Every error names the offending ``section.key``.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .engine.detection import DetectionConfig
from .engine.feedback import PulseProtocol
from .params import LevelScheme, ParameterError, SystemParams, mhz


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


RATE_KEYS = ("g", "kappa", "gamma", "delta_g", "delta_e", "delta_drive", "delta_eff")
REQUIRED_SECTIONS = ("system", "protocol", "detection", "run", "analysis")


@dataclass(frozen=True)
class RunSettings:
    seed: int
    n_traj: int = 0
    duration: float = 20e-6
    t_max: float = 4.7e-6
    dt: float = 1.64e-9
    mc_step: float = 1e-9
    workers: int = 1
    batch: int = 256
    output_dir: str = "out"


@dataclass(frozen=True)
class AnalysisSettings:
    window: tuple[float, float] | None = None
    settle: float = 0.25e-6
    bin_width: float = 1.64e-9
    filter: bool = True
    dark_window: tuple[float, float] | None = None
    sweep_widths: tuple[float, ...] = (0.5e-6, 1e-6, 1.5e-6, 2e-6, 2.5e-6, 3e-6)


@dataclass(frozen=True)
class RunConfig:
    params: SystemParams
    scheme: LevelScheme
    protocol: PulseProtocol
    detection: DetectionConfig
    run: RunSettings
    analysis: AnalysisSettings
    predict_sweep: tuple[str, tuple[float, ...]] | None = None
    source: str = field(default="", compare=False)


def _get(cp, section, key, conv, default=None, required=False):
    name = f"{section}.{key}"
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(name, "missing required key")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(name, f"cannot parse {raw!r} ({exc})") from None


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())


def _pair(raw: str) -> tuple[float, float]:
    v = _floats(raw)
    if len(v) != 2:
        raise ValueError("expected START,END")
    return v


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "on", "yes", "true"):
        return True
    if low in ("0", "off", "no", "false"):
        return False
    raise ValueError("expected on/off")


def parse_bin(raw: str) -> float:
    """'1.64ns', '16.4ns' or any '<number>ns' / '<number>' (ns) -> seconds."""
    s = raw.strip().lower()
    if s.endswith("ns"):
        s = s[:-2]
    val = float(s) * 1e-9
    if not val > 0:
        raise ValueError("bin width must be positive")
    return val


_PARAM_NAMES = ("n_max_v", "n_max_h", "branching", "delta_eff", "delta_drive", "delta_e",
                "delta_g", "kappa", "gamma", "alpha", "epsilon", "g")


def _param_key(msg: str) -> str:
    for k in _PARAM_NAMES:
        if re.search(rf"\b{k}\b", msg):
            return "system.branching_pi" if k == "branching" else f"system.{k}"
    return "system"


def _positive(name, value):
    if value is not None and not value > 0:
        raise ConfigError(name, "must be > 0")
    return value


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    cp.read(path)
    return parse_config(cp, str(path))


def parse_config(cp: configparser.ConfigParser, source: str = "") -> RunConfig:
    for sec in REQUIRED_SECTIONS:
        if not cp.has_section(sec):
            raise ConfigError(sec, "missing section")

    kw = {}
    for key in RATE_KEYS:
        v = _get(cp, "system", key, float)
        if v is not None:
            kw[key] = mhz(v)
    n = _get(cp, "system", "photon_number", float)
    a = _get(cp, "system", "alpha", float)
    if n is not None and a is not None:
        raise ConfigError("system.alpha", "give either alpha or photon_number, not both")
    if n is not None:
        if n < 0:
            raise ConfigError("system.photon_number", "must be >= 0")
        kw["alpha"] = math.sqrt(n)
    elif a is not None:
        kw["alpha"] = a
    for key in ("epsilon",):
        v = _get(cp, "system", key, float)
        if v is not None:
            kw[key] = v
    for key in ("n_max_v", "n_max_h"):
        v = _get(cp, "system", key, int)
        if v is not None:
            kw[key] = v
    bp = _get(cp, "system", "branching_pi", float)
    if bp is not None:
        kw["branching"] = (bp, 1.0 - bp)
    try:
        params = SystemParams(**kw)
    except ParameterError as exc:
        raise ConfigError(_param_key(str(exc)), str(exc)) from None
    scheme = LevelScheme(
        pi=_get(cp, "system", "pi_weight", float, 1.0),
        sigma_outer=_get(cp, "system", "sigma_outer", float, 1.0),
        sigma_inner=_get(cp, "system", "sigma_inner", float, 1.0))

    feedback = _get(cp, "protocol", "feedback", _bool, True)
    pkw = dict(
        trigger_delay=_get(cp, "protocol", "trigger_delay_ns", float, 325.0) * 1e-9,
        off_start=_get(cp, "protocol", "off_start_us", float, 0.0) * 1e-6,
        width=_get(cp, "protocol", "width_us", float, 0.0) * 1e-6,
        attenuation=_get(cp, "protocol", "attenuation", float, 0.0),
        rearm_deadtime=_get(cp, "protocol", "rearm_deadtime_ns", float, 0.0) * 1e-9,
    )
    units = {"trigger_delay": "trigger_delay_ns", "off_start": "off_start_us",
             "width": "width_us", "rearm_deadtime": "rearm_deadtime_ns"}
    for k, ini in units.items():
        if pkw[k] < 0:
            raise ConfigError(f"protocol.{ini}", "must be >= 0")
    if not 0.0 <= pkw["attenuation"] <= 1.0:
        raise ConfigError("protocol.attenuation", "must lie in [0, 1]")
    if not feedback:
        pkw.update(width=0.0, attenuation=1.0)
    try:
        protocol = PulseProtocol(**pkw)
    except ValueError as exc:
        raise ConfigError("protocol", str(exc)) from None

    try:
        detection = DetectionConfig(
            epsilon=_get(cp, "detection", "epsilon", float),
            mode=_get(cp, "detection", "mode", str, "cavity"),
            split=_get(cp, "detection", "split", float, 0.5),
            efficiency=_get(cp, "detection", "efficiency", float, 1.0),
            background_rate=_get(cp, "detection", "background_rate", float, 0.0),
            start_channel=_get(cp, "detection", "start_channel", str, "APD_A"))
    except ValueError as exc:
        key = str(exc).split()[0]
        raise ConfigError(f"detection.{key}", str(exc)) from None

    seed = _get(cp, "run", "seed", int, required=True)
    run = RunSettings(
        seed=seed,
        n_traj=_get(cp, "run", "n_traj", int, 0),
        duration=_positive("run.duration_us", _get(cp, "run", "duration_us", float, 20.0)) * 1e-6,
        t_max=_positive("run.t_max_us", _get(cp, "run", "t_max_us", float, 4.7)) * 1e-6,
        dt=_positive("run.dt_ns", _get(cp, "run", "dt_ns", float, 1.64)) * 1e-9,
        mc_step=_positive("run.mc_step_ns", _get(cp, "run", "mc_step_ns", float, 1.0)) * 1e-9,
        workers=_get(cp, "run", "workers", int, 1),
        batch=_get(cp, "run", "batch", int, 256),
        output_dir=_get(cp, "run", "output_dir", str, "out"))
    if run.n_traj < 0:
        raise ConfigError("run.n_traj", "must be >= 0")

    win = _get(cp, "analysis", "window_us", _pair)
    dark = _get(cp, "analysis", "dark_window_us", _pair)
    analysis = AnalysisSettings(
        window=None if win is None else (win[0] * 1e-6, win[1] * 1e-6),
        settle=_get(cp, "analysis", "settle_us", float, 0.25) * 1e-6,
        bin_width=_get(cp, "analysis", "bin", parse_bin, 1.64e-9),
        filter=_get(cp, "analysis", "filter", _bool, True),
        dark_window=None if dark is None else (dark[0] * 1e-6, dark[1] * 1e-6),
        sweep_widths=tuple(w * 1e-6 for w in _get(
            cp, "analysis", "sweep_widths_us", _floats, (0.5, 1, 1.5, 2, 2.5, 3))))
    if analysis.window is not None and not analysis.window[0] < analysis.window[1]:
        raise ConfigError("analysis.window_us", "START must be below END")

    sweep = None
    if cp.has_section("predict"):
        key = _get(cp, "predict", "sweep", str)
        vals = _get(cp, "predict", "values", _floats, ())
        if key:
            if key not in RATE_KEYS + ("alpha", "photon_number"):
                raise ConfigError("predict.sweep", f"unknown parameter {key!r}")
            sweep = (key, vals)
    return RunConfig(params, scheme, protocol, detection, run, analysis, sweep, source)


def preset_path(name: str = "dark_window") -> Path:
    """Path of a configuration preset shipped with the package."""
    p = resources.files("cqbeats") / "presets" / f"{name}.ini"
    if not p.is_file():
        raise ConfigError("preset", f"no preset named {name!r}")
    return Path(str(p))
