"""Quantum-trajectory unraveling that emits detector click streams.

Each trajectory is a pure state evolved under the non-Hermitian effective
Hamiltonian. A jump happens when the squared norm drops below a uniform
deviate; the channel is drawn with probability proportional to ||C psi||^2.
The detected channel is A + lam*f (output field plus the local oscillator,
which follows the drive), so its clicks carry the homodyne interference.
Using the displaced operator requires the extra drift term
-i lam* f A - (i/2)|lam f|^2 in H_eff, which follows from
D[A + l] rho = D[A] rho + 1/2 [l* A - l A^dag, rho].

Trajectories are vectorised: one propagator per quantised drive level acts
on all states at once, and jump times are resolved on a sub-grid of each
step. Every trajectory owns a generator spawned from one SeedSequence, so
results do not depend on batching or on the number of worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ..clickstream import (APD_A, APD_B, BACKGROUND, CAVITY, GATE_COPY, TICK, ClickStream,
                           merge)
from ..operators import build_operators
from ..params import LevelScheme, SystemParams
from .detection import DetectedField, DetectionConfig
from .feedback import PulseProtocol
from .master import TRUNCATION_LIMIT, MasterEquation, TruncationOverflow

MAX_WINDOWS = 32


class SeedError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryRun:
    """Output of :func:`run_trajectories`.

    ``trigger_ticks``/``gate_emitted`` list every start-channel click (in
    stream time) and whether it fired a gate.
    """

    stream: ClickStream
    trigger_ticks: np.ndarray
    gate_emitted: np.ndarray
    n_traj: int
    duration: float
    seeds: tuple

    @property
    def missed_fraction(self) -> float:
        n = self.gate_emitted.size
        return float((~self.gate_emitted).sum() / n) if n else 0.0


def gate_copy_log(run: TrajectoryRun) -> list[tuple[int, bool]]:
    """(trigger tick, gate emitted) for every trigger in the run."""
    return list(zip(run.trigger_ticks.tolist(), run.gate_emitted.tolist()))


class _Propagators:
    """Cached step and sub-step propagators for quantised drive fractions."""

    def __init__(self, ops, field: DetectedField, dt: float, n_sub: int, levels: int):
        self.dt, self.n_sub, self.levels = dt, n_sub, levels
        self.ops, self.field = ops, field
        A = field.A
        chans = {"detected": None}
        if field.B is not None:
            chans["other"] = field.B
        chans.update(ops.spontaneous())
        self.names = list(chans)
        fixed = [c for c in chans.values() if c is not None]
        self.fixed = np.stack(fixed) if fixed else np.zeros((0,) + A.shape)
        self.decay0 = sum((c.conj().T @ c for c in fixed), np.zeros_like(A)) + A.conj().T @ A
        self.cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def frac(self, q: int) -> float:
        return q / self.levels

    def h_eff(self, f: float) -> np.ndarray:
        ops, field = self.ops, self.field
        lam = field.lam * (f if field.follows_drive else 1.0)
        return (ops.H0 + f * ops.H_drive - 0.5j * self.decay0
                - 1j * np.conj(lam) * field.A
                - 0.5j * abs(lam) ** 2 * np.eye(ops.dim))

    def get(self, q: int):
        if q not in self.cache:
            gen = -1j * self.h_eff(self.frac(q))
            sub = expm(gen * (self.dt / self.n_sub))
            self.cache[q] = (expm(gen * self.dt), sub)
        return self.cache[q]

    def detected(self, f: float) -> np.ndarray:
        return self.field.op(f)


def collapse(state: np.ndarray, operators, rng) -> tuple[int, np.ndarray]:
    """Apply one jump: channel k with probability ~ ||C_k psi||^2, renormalised."""
    cands = [c @ state for c in operators]
    w = np.array([np.vdot(v, v).real for v in cands])
    k = int(rng.choice(w.size, p=w / w.sum()))
    return k, cands[k] / math.sqrt(w[k])


def _background_seed(seed: np.random.SeedSequence) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (0xB6,))


def _initial_states(rho: np.ndarray, rngs) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0, None)
    w = w / w.sum()
    idx = [rng.choice(w.size, p=w) for rng in rngs]
    return v[:, idx].astype(complex)


def _simulate_batch(params: SystemParams, scheme, protocol: PulseProtocol,
                    detection: DetectionConfig, duration: float, seeds,
                    dt: float, n_sub: int, levels: int):
    ops = build_operators(params, scheme)
    field = DetectedField(ops, detection)
    prop = _Propagators(ops, field, dt, n_sub, levels)
    rngs = [np.random.default_rng(s) for s in seeds]
    M = len(rngs)
    me = MasterEquation(ops)
    psi = _initial_states(me.steady_state(1.0), rngs)
    thr = np.array([r.random() for r in rngs])
    frac = np.ones(M)
    win_s = np.full((M, MAX_WINDOWS), np.inf)
    win_e = np.full((M, MAX_WINDOWS), -np.inf)
    busy = np.full(M, -np.inf)
    bg_rate = detection.background_rate
    # background has its own generators so that switching it on leaves the
    # cavity random numbers untouched (paired runs stay comparable)
    bg_rngs = [np.random.default_rng(_background_seed(s)) for s in seeds]
    bg_next = np.array([r.exponential(1 / bg_rate) if bg_rate > 0 else np.inf for r in bg_rngs])
    events = [[] for _ in range(M)]       # (time, channel, origin)
    triggers = [[] for _ in range(M)]     # (time, emitted)
    r_att = protocol.attenuation
    decay_k = math.exp(-params.kappa * dt)
    n_steps = int(math.ceil(duration / dt - 1e-9))
    h_sub = dt / n_sub
    start_ch = APD_A if detection.start_channel == "APD_A" else APD_B
    na, nv, nh = ops.dims
    tail_v = np.zeros((na, nv, nh), bool)
    tail_v[:, -1, :] = True
    tail_h = np.zeros((na, nv, nh), bool)
    tail_h[:, :, -1] = True
    tail_v, tail_h = tail_v.ravel(), tail_h.ravel()

    def click(i: int, t: float, origin: int):
        rng = bg_rngs[i] if origin == BACKGROUND else rngs[i]
        ch = APD_A if rng.random() < detection.split else APD_B
        events[i].append((t, ch, origin))
        if ch != start_ch:
            return
        ok = t >= busy[i]
        triggers[i].append((t, ok))
        if not ok:
            return
        busy[i] = t + protocol.rearm_deadtime
        events[i].append((t + protocol.trigger_delay, GATE_COPY, origin))
        if protocol.active:
            s, e = t + protocol.gate_on, t + protocol.gate_off
            row_s, row_e = win_s[i], win_e[i]
            overlap = (row_s <= e) & (row_e >= s)
            if overlap.any():
                j = int(np.flatnonzero(overlap)[0])
                row_s[j], row_e[j] = min(row_s[j], s), max(row_e[j], e)
                return
            free = np.flatnonzero(row_e < t)
            if not free.size:
                raise RuntimeError("too many overlapping drive windows")
            row_s[free[0]], row_e[free[0]] = s, e

    def jump(i: int, state: np.ndarray, f: float, t: float) -> np.ndarray:
        rng = rngs[i]
        k, new = collapse(state, [prop.detected(f), *prop.fixed], rng)
        if k == 0 and rng.random() < detection.efficiency:
            click(i, t, CAVITY)
        return new

    for step in range(n_steps):
        t0 = step * dt
        tmid = t0 + 0.5 * dt
        if protocol.active:
            dark = ((win_s <= tmid) & (tmid < win_e)).any(axis=1)
            target = np.where(dark, r_att, 1.0)
        else:
            target = 1.0
        f_end = target + (frac - target) * decay_k
        q = np.rint(0.5 * (frac + f_end) * levels).astype(int)
        new = np.empty_like(psi)
        uq = np.unique(q)
        for qq in uq:
            cols = np.flatnonzero(q == qq) if uq.size > 1 else slice(None)
            new[:, cols] = prop.get(int(qq))[0] @ psi[:, cols]
        n2 = np.einsum("ij,ij->j", new.conj(), new).real
        for i in np.flatnonzero(n2 < thr):
            # redo this step on the sub-grid to place the jump(s)
            qq = int(q[i])
            sub = prop.get(qq)[1]
            f = prop.frac(qq)
            state = psi[:, i]
            for j in range(n_sub):
                state = sub @ state
                if np.vdot(state, state).real < thr[i]:
                    state = jump(i, state, f, t0 + (j + 1) * h_sub)
                    thr[i] = rngs[i].random()
            new[:, i] = state
        psi = new
        frac = f_end
        t1 = t0 + dt
        while True:
            due = np.flatnonzero(bg_next < t1)
            if not due.size:
                break
            for i in due:
                click(i, bg_next[i], BACKGROUND)
                bg_next[i] += bg_rngs[i].exponential(1 / bg_rate)
        if step % 512 == 511:
            nrm = np.einsum("ij,ij->j", psi.conj(), psi).real
            pop = np.abs(psi) ** 2 / nrm
            tail = max(pop[tail_v].sum(axis=0).mean(), pop[tail_h].sum(axis=0).mean())
            if tail > TRUNCATION_LIMIT:
                raise TruncationOverflow(
                    f"trajectory Fock tail population {tail:.2e} (n_max_v/n_max_h too small)")
    return events, triggers


def _pack(events, triggers, duration: float, delay: float):
    D = int(round(duration / TICK))
    delay_ticks = int(round(delay / TICK))
    streams, trig_t, trig_ok = [], [], []
    for k, (ev, tr) in enumerate(zip(events, triggers)):
        off = k * D
        ev = [e for e in ev if e[0] < duration]
        if ev:
            t, ch, org = zip(*ev)
            t, ch = np.asarray(t), np.asarray(ch)
            # gate copies sit exactly delay_ticks after their trigger's tick
            gate = ch == GATE_COPY
            t = np.where(gate, t - delay, t)
            ticks = np.rint(t / TICK).astype(np.int64) + off + np.where(gate, delay_ticks, 0)
            streams.append(ClickStream(ticks, ch, np.asarray(org)))
        if tr:
            t, ok = zip(*tr)
            trig_t.append(np.rint(np.asarray(t) / TICK).astype(np.int64) + off)
            trig_ok.append(np.asarray(ok, bool))
    segs = np.array([[k * D, (k + 1) * D] for k in range(len(events))], dtype=np.int64)
    stream = merge(*streams) if streams else ClickStream.empty()
    stream = ClickStream(stream.ticks, stream.channel, stream.origin, segs)
    tt = np.concatenate(trig_t) if trig_t else np.zeros(0, np.int64)
    tok = np.concatenate(trig_ok) if trig_ok else np.zeros(0, bool)
    return stream, tt, tok


def trajectory_seeds(seed, n_traj: int) -> list[np.random.SeedSequence]:
    """Independent per-trajectory seeds spawned from one root seed."""
    if seed is None:
        raise SeedError("an explicit seed is required")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return root.spawn(n_traj)


def check_unique(seeds) -> None:
    keys = [(tuple(np.atleast_1d(s.entropy)), tuple(s.spawn_key)) for s in seeds]
    if len(set(keys)) != len(keys):
        raise SeedError("trajectory seeds must be unique")


def run_trajectories(params: SystemParams, protocol: PulseProtocol | None,
                     detection: DetectionConfig, duration: float, n_traj: int, seed,
                     scheme: LevelScheme | None = None, dt: float = 1e-9, n_sub: int = 16,
                     drive_levels: int = 200, batch: int = 256, workers: int = 1,
                     seeds=None) -> TrajectoryRun:
    """Monte Carlo click stream for ``n_traj`` trajectories of ``duration``.

    Trajectory k occupies stream time [k*duration, (k+1)*duration) and its
    segment is recorded so the correlator never pairs clicks across
    trajectories. ``dt`` is the propagation step; jump times are resolved to
    dt/n_sub. The drive field fraction is quantised to 1/drive_levels.
    """
    protocol = protocol or PulseProtocol.no_feedback()
    if n_traj < 0:
        raise ValueError("n_traj must be non-negative")
    if duration <= 0 or duration * params.kappa < 10:
        raise ValueError("duration must be much longer than 1/kappa")
    if detection.mode != "cavity":
        raise ValueError("trajectories detect the cavity output; use mode='cavity'")
    seeds = list(seeds) if seeds is not None else trajectory_seeds(seed, n_traj)
    if len(seeds) != n_traj:
        raise SeedError("need one seed per trajectory")
    check_unique(seeds)
    if n_traj == 0:
        return TrajectoryRun(ClickStream.empty(), np.zeros(0, np.int64), np.zeros(0, bool),
                             0, duration, ())
    chunks = [seeds[i:i + batch] for i in range(0, n_traj, batch)]
    args = (params, scheme, protocol, detection, duration)
    kw = dict(dt=dt, n_sub=n_sub, levels=drive_levels)
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_simulate_batch, *args, ch, **kw) for ch in chunks]
            results = [f.result() for f in futs]
    else:
        results = [_simulate_batch(*args, ch, **kw) for ch in chunks]
    events = [e for ev, _ in results for e in ev]
    triggers = [t for _, tr in results for t in tr]
    stream, tt, tok = _pack(events, triggers, duration, protocol.trigger_delay)
    return TrajectoryRun(stream, tt, tok, n_traj, duration, tuple(seeds))
