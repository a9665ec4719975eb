"""Time-tagged detector events, the missed-trigger filter and the correlator.

Timestamps are integer picosecond ticks. Binary files hold 16-byte
little-endian records (u64 tick, u8 channel, u8 origin, 6 pad bytes); the
CSV variant has the columns ``tick,channel,origin``. Live-time segments, when
known, travel in a ``<file>.segments.json`` sidecar.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

TICK = 1e-12
APD_A, APD_B, GATE_COPY = 0, 1, 2
CHANNELS = {"APD_A": APD_A, "APD_B": APD_B, "GATE_COPY": GATE_COPY}
CAVITY, BACKGROUND = 0, 1

RECORD = np.dtype([("tick", "<u8"), ("channel", "u1"), ("origin", "u1"), ("pad", "V6")])


class StreamError(ValueError):
    pass


def to_ticks(seconds) -> np.ndarray:
    return np.rint(np.asarray(seconds, dtype=float) / TICK).astype(np.int64)


def channel_id(ch) -> int:
    if isinstance(ch, str):
        try:
            return CHANNELS[ch]
        except KeyError:
            raise StreamError(f"unknown channel {ch!r}") from None
    return int(ch)


@dataclass(frozen=True)
class ClickStream:
    ticks: np.ndarray
    channel: np.ndarray
    origin: np.ndarray
    segments: np.ndarray | None = None

    def __post_init__(self):
        ticks = np.asarray(self.ticks, dtype=np.int64)
        channel = np.asarray(self.channel, dtype=np.uint8)
        origin = np.asarray(self.origin, dtype=np.uint8)
        if not (ticks.shape == channel.shape == origin.shape):
            raise StreamError("ticks, channel and origin must have equal length")
        if channel.size and channel.max() > GATE_COPY:
            raise StreamError("invalid channel code")
        if ticks.size and ticks.min() < 0:
            raise StreamError("negative timestamp")
        order = np.argsort(ticks, kind="stable")
        object.__setattr__(self, "ticks", ticks[order])
        object.__setattr__(self, "channel", channel[order])
        object.__setattr__(self, "origin", origin[order])
        if self.segments is not None:
            seg = np.asarray(self.segments, dtype=np.int64).reshape(-1, 2)
            object.__setattr__(self, "segments", seg)

    def __len__(self):
        return int(self.ticks.size)

    @classmethod
    def empty(cls) -> "ClickStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.uint8), np.zeros(0, np.uint8))

    def live_segments(self) -> np.ndarray:
        """Segments as (start, end) ticks; the event span when none are recorded."""
        if self.segments is not None and len(self.segments):
            return self.segments
        if not len(self):
            return np.zeros((0, 2), np.int64)
        return np.array([[self.ticks[0], self.ticks[-1] + 1]], dtype=np.int64)

    @property
    def live_time(self) -> float:
        seg = self.live_segments()
        return float((seg[:, 1] - seg[:, 0]).sum()) * TICK

    def select(self, mask) -> "ClickStream":
        return ClickStream(self.ticks[mask], self.channel[mask], self.origin[mask], self.segments)

    def channel_ticks(self, ch) -> np.ndarray:
        return self.ticks[self.channel == channel_id(ch)]

    def shifted(self, offset_ticks: int) -> "ClickStream":
        seg = None if self.segments is None else self.segments + offset_ticks
        return ClickStream(self.ticks + offset_ticks, self.channel, self.origin, seg)

    def time_reversed(self) -> "ClickStream":
        """Mirror every timestamp inside the overall live span."""
        seg = self.live_segments()
        lo, hi = int(seg[:, 0].min()), int(seg[:, 1].max())
        # t -> lo + hi - 1 - t maps [lo, hi) onto itself
        new_seg = np.stack([lo + hi - seg[:, 1], lo + hi - seg[:, 0]], axis=1)[::-1]
        return ClickStream(lo + hi - 1 - self.ticks, self.channel, self.origin, new_seg)

    # ------------------------------------------------------------ file io
    def write_binary(self, path) -> None:
        rec = np.zeros(len(self), dtype=RECORD)
        rec["tick"] = self.ticks
        rec["channel"] = self.channel
        rec["origin"] = self.origin
        rec.tofile(path)
        self._write_segments(path)

    @classmethod
    def read_binary(cls, path) -> "ClickStream":
        rec = np.fromfile(path, dtype=RECORD)
        return cls(rec["tick"].astype(np.int64), rec["channel"], rec["origin"],
                   _read_segments(path))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "channel", "origin"])
            w.writerows(zip(self.ticks.tolist(), self.channel.tolist(), self.origin.tolist()))
        self._write_segments(path)

    @classmethod
    def read_csv(cls, path) -> "ClickStream":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        if data.size == 0:
            s = cls.empty()
        else:
            s = cls(data[:, 0], data[:, 1], data[:, 2])
        return replace(s, segments=_read_segments(path))

    @classmethod
    def read(cls, path) -> "ClickStream":
        return cls.read_csv(path) if str(path).endswith(".csv") else cls.read_binary(path)

    def write(self, path) -> None:
        if str(path).endswith(".csv"):
            self.write_csv(path)
        else:
            self.write_binary(path)

    def _write_segments(self, path) -> None:
        side = f"{path}.segments.json"
        if self.segments is not None:
            with open(side, "w") as fh:
                json.dump(self.segments.tolist(), fh)
        elif os.path.exists(side):
            os.remove(side)


def _read_segments(path):
    side = f"{path}.segments.json"
    if os.path.exists(side):
        with open(side) as fh:
            return np.asarray(json.load(fh), dtype=np.int64).reshape(-1, 2)
    return None


def merge(*streams: ClickStream) -> ClickStream:
    """Union of events; segments are concatenated when every input has them."""
    if not streams:
        return ClickStream.empty()
    segs = [s.segments for s in streams]
    seg = None if any(x is None for x in segs) else np.concatenate(segs)
    return ClickStream(np.concatenate([s.ticks for s in streams]),
                       np.concatenate([s.channel for s in streams]),
                       np.concatenate([s.origin for s in streams]), seg)


def filter_triggered(stream: ClickStream, trigger_delay: float = 325e-9,
                     window: float = 10e-9, start_channel="APD_A") -> ClickStream:
    """Drop start clicks that did not produce a gate copy.

    A start click at t is kept when it can be paired with a GATE_COPY event
    within ``window`` of t + ``trigger_delay``. Pairing is one-to-one: a gate
    copy vouches for a single start, the closest one, so a click arriving a
    few ns after a successful trigger is not kept on its neighbour's copy.
    Other channels pass unchanged, so the filter is idempotent.
    """
    if len(stream) == 0:
        return stream
    gates = stream.channel_ticks(GATE_COPY)
    if gates.size == 0:
        raise StreamError("filter needs GATE_COPY events; none present in stream")
    start = channel_id(start_channel)
    start_idx = np.flatnonzero(stream.channel == start)
    expected = stream.ticks[start_idx] + int(round(trigger_delay / TICK))
    tol = int(round(window / TICK))
    lo = np.searchsorted(gates, expected - tol, side="left")
    hi = np.searchsorted(gates, expected + tol, side="right")
    n_cand = hi - lo
    # every (start, gate) candidate pair
    si = np.repeat(np.arange(start_idx.size), n_cand)
    gi = np.arange(n_cand.sum()) - np.repeat(np.cumsum(n_cand) - n_cand, n_cand) + np.repeat(lo, n_cand)
    matched = np.zeros(start_idx.size, dtype=bool)
    per_gate = np.bincount(gi, minlength=gates.size)
    simple = (n_cand[si] == 1) & (per_gate[gi] == 1)
    matched[si[simple]] = True
    # contested pairs: closest first, then earliest start
    rest = np.flatnonzero(~simple)
    if rest.size:
        off = np.abs(gates[gi[rest]] - expected[si[rest]])
        used_gate, used_start = set(), set()
        for k in rest[np.lexsort((si[rest], off))]:
            a, b = int(si[k]), int(gi[k])
            if a not in used_start and b not in used_gate:
                used_start.add(a)
                used_gate.add(b)
                matched[a] = True
    keep = np.ones(len(stream), dtype=bool)
    keep[start_idx] = matched
    return stream.select(keep)


@dataclass(frozen=True)
class CorrelationHistogram:
    """Start-stop lag histogram.

    ``exposure[k]`` counts the starts whose live segment fully covers bin k,
    so an uncorrelated stop stream fills bin k with
    exposure * stop_rate * bin_width counts on average.
    """

    bin_ticks: int
    lags: np.ndarray
    counts: np.ndarray
    exposure: np.ndarray
    n_starts: int
    stop_rate: float
    background_level: float = 0.0
    suppressed: float = 0.0
    mode: str = "multi-stop"
    meta: dict = field(default_factory=dict)

    @property
    def bin_width(self) -> float:
        return self.bin_ticks * TICK

    @property
    def tau(self) -> np.ndarray:
        """Bin centres in seconds."""
        return (self.lags + 0.5 * self.bin_ticks) * TICK

    @property
    def expected(self) -> np.ndarray:
        return self.exposure * self.stop_rate * self.bin_width

    @property
    def normalized(self) -> bool:
        return bool(np.all(self.expected > 0))

    @property
    def g2(self) -> np.ndarray:
        exp = self.expected
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.counts - self.background_level) / (exp - self.background_level)

    @property
    def g2_error(self) -> np.ndarray:
        exp = self.expected
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(np.maximum(self.counts, 1)) / (exp - self.background_level)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# bin_ticks={self.bin_ticks}\n")
            fh.write(f"# n_starts={self.n_starts}\n")
            fh.write(f"# stop_rate={float(self.stop_rate)!r}\n")
            fh.write(f"# background_level={float(self.background_level)!r}\n")
            fh.write(f"# suppressed={float(self.suppressed)!r}\n")
            fh.write(f"# mode={self.mode}\n")
            w = csv.writer(fh)
            w.writerow(["tau_ns", "counts", "g2_normalized", "exposure"])
            for tau, c, g, e in zip(self.lags * TICK * 1e9, self.counts, self.g2, self.exposure):
                w.writerow([f"{tau:.6f}", int(c), f"{g:.10g}", f"{e:.10g}"])

    @classmethod
    def read_csv(cls, path) -> "CorrelationHistogram":
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    k, v = line[1:].strip().split("=", 1)
                    meta[k.strip()] = v.strip()
                elif line.startswith("tau_ns"):
                    continue
                elif line.strip():
                    rows.append([float(x) for x in line.split(",")])
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        bt = int(meta["bin_ticks"])
        return cls(bin_ticks=bt, lags=np.rint(arr[:, 0] * 1e3).astype(np.int64),
                   counts=arr[:, 1].astype(np.int64), exposure=arr[:, 3],
                   n_starts=int(meta["n_starts"]), stop_rate=float(meta["stop_rate"]),
                   background_level=float(meta.get("background_level", 0.0)),
                   suppressed=float(meta.get("suppressed", 0.0)),
                   mode=meta.get("mode", "multi-stop"))


def _segment_bounds(ticks: np.ndarray, seg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(start, end) of the live segment containing each tick; -1/-1 if none."""
    order = np.argsort(seg[:, 0])
    seg = seg[order]
    idx = np.searchsorted(seg[:, 0], ticks, side="right") - 1
    ok = (idx >= 0)
    idx_c = np.clip(idx, 0, len(seg) - 1)
    ok &= ticks < seg[idx_c, 1]
    lo = np.where(ok, seg[idx_c, 0], -1)
    hi = np.where(ok, seg[idx_c, 1], -1)
    return lo, hi


def _count_above(values: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Number of entries of ``values`` strictly greater than each k."""
    v = np.sort(values)
    return (v.size - np.searchsorted(v, k, side="right")).astype(float)


def correlate(stream: ClickStream, bin_width: float, t_max: float, mode: str = "multi-stop",
              start="APD_A", stop="APD_B", symmetric: bool = False,
              chunk: int = 200_000) -> CorrelationHistogram:
    """Histogram of stop-minus-start lags.

    ``multi-stop`` counts every stop within t_max of each start,
    ``start-stop`` only the first one. With ``symmetric`` the lag axis spans
    (-t_max, t_max); negative bins are closed on the right so that time
    reversal maps bin k onto bin -k-1.
    """
    if len(stream) == 0:
        raise StreamError("cannot correlate an empty stream")
    if mode not in ("multi-stop", "start-stop"):
        raise ValueError("mode must be 'multi-stop' or 'start-stop'")
    if bin_width <= 0 or t_max < bin_width:
        raise ValueError("need bin_width > 0 and t_max >= bin_width")
    if symmetric and mode != "multi-stop":
        raise ValueError("symmetric histograms need multi-stop mode")
    bt = int(round(bin_width / TICK))
    nb = int(math.ceil(t_max / bin_width - 1e-9))
    s_ch, p_ch = channel_id(start), channel_id(stop)
    same = s_ch == p_ch
    seg = stream.live_segments()

    starts = stream.ticks[stream.channel == s_ch]
    stops = stream.ticks[stream.channel == p_ch]
    s_lo, s_hi = _segment_bounds(starts, seg)
    live = s_lo >= 0
    starts, s_lo, s_hi = starts[live], s_lo[live], s_hi[live]
    # fully covered bins on each side of every start
    fwd = np.minimum((s_hi - starts) // bt, nb)
    # negative bin k holds start - stop in [k bt, (k+1) bt), i.e. stop >= start - (k+1) bt + 1
    back = np.minimum((starts - s_lo + 1) // bt, nb) if symmetric else np.zeros_like(fwd)

    counts_pos = np.zeros(nb, dtype=np.int64)
    counts_neg = np.zeros(nb, dtype=np.int64)
    first_idx = np.searchsorted(stops, starts, side="left")
    if same:
        # skip the start event itself (and any identical-tick duplicates before it)
        first_idx = np.searchsorted(stops, starts, side="right")
    for c0 in range(0, starts.size, chunk):
        sl = slice(c0, c0 + chunk)
        st, f, b = starts[sl], fwd[sl], back[sl]
        lo = first_idx[sl]
        hi = np.searchsorted(stops, st + f * bt, side="left")
        if mode == "start-stop":
            hi = np.minimum(hi, lo + 1)
        n = np.maximum(hi - lo, 0)
        if n.sum():
            rep = np.repeat(np.arange(st.size), n)
            offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
            lags = stops[lo[rep] + offs] - st[rep]
            counts_pos += np.bincount(lags // bt, minlength=nb)[:nb]
        if symmetric:
            lo_n = np.searchsorted(stops, st - b * bt, side="right")
            hi_n = np.searchsorted(stops, st, side="left")
            n = np.maximum(hi_n - lo_n, 0)
            if n.sum():
                rep = np.repeat(np.arange(st.size), n)
                offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
                lags = st[rep] - stops[lo_n[rep] + offs]
                counts_neg += np.bincount(lags // bt, minlength=nb)[:nb]

    k = np.arange(nb)
    exp_pos = _count_above(fwd, k)
    stop_rate = stops.size / stream.live_time if stream.live_time > 0 else 0.0
    if symmetric:
        exp_neg = _count_above(back, k)
        counts = np.concatenate([counts_neg[::-1], counts_pos])
        exposure = np.concatenate([exp_neg[::-1], exp_pos])
        lags = np.arange(-nb, nb, dtype=np.int64) * bt
    else:
        counts, exposure = counts_pos, exp_pos
        lags = k.astype(np.int64) * bt
    return CorrelationHistogram(bin_ticks=bt, lags=lags, counts=counts, exposure=exposure,
                                n_starts=int(starts.size), stop_rate=stop_rate, mode=mode)


def estimate_dark_level(hist: CorrelationHistogram, t_start: float, t_end: float) -> float:
    """Mean counts per bin over a lag window where the drive is off."""
    tau = hist.tau
    m = (tau >= t_start) & (tau < t_end)
    if not m.any():
        raise ValueError("dark window contains no bins")
    return float(hist.counts[m].mean())


def subtract_background(hist: CorrelationHistogram, dark_level: float) -> CorrelationHistogram:
    """Treat ``dark_level`` counts/bin as the zero of g2.

    The uncorrelated plateau keeps its value; ``suppressed`` records the
    removed level in g2 units of the unsubtracted histogram.
    """
    if dark_level < 0:
        raise ValueError("dark_level must be non-negative")
    plateau = float(np.mean(hist.expected))
    if dark_level >= plateau:
        raise ValueError("dark_level exceeds the uncorrelated plateau")
    return replace(hist, background_level=float(dark_level), suppressed=dark_level / plateau)


def rebin(hist: CorrelationHistogram, factor: int) -> CorrelationHistogram:
    """Merge ``factor`` adjacent bins; counts are summed exactly."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("rebin factor must be a positive integer")
    factor = int(factor)
    n = hist.counts.size
    if n % factor:
        raise ValueError(f"{n} bins are not divisible by {factor}")
    counts = hist.counts.reshape(-1, factor).sum(axis=1)
    exposure = hist.exposure.reshape(-1, factor).mean(axis=1)
    lags = hist.lags[::factor]
    return replace(hist, bin_ticks=hist.bin_ticks * factor, lags=lags, counts=counts,
                   exposure=exposure, background_level=hist.background_level * factor)
