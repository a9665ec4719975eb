"""Deterministic master-equation evolution and the conditional g2(tau)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..operators import SystemOperators, build_operators, fock_tail, reduce_atom
from ..params import LEVELS, LevelScheme, SystemParams
from .detection import DetectedField, DetectionConfig
from .feedback import PulseProtocol

TRUNCATION_LIMIT = 1e-3


class TruncationOverflow(RuntimeError):
    """Population in the highest retained Fock state exceeded the limit."""


class SolverDivergence(RuntimeError):
    pass


def _spre_post(a: np.ndarray, b: np.ndarray) -> sp.csr_matrix:
    """Superoperator of rho -> a rho b for row-major vec(rho)."""
    return sp.kron(sp.csr_matrix(a), sp.csr_matrix(b.T), format="csr")


def liouvillian(H: np.ndarray, jumps) -> sp.csr_matrix:
    d = H.shape[0]
    eye = np.eye(d)
    decay = sum((c.conj().T @ c for c in jumps), np.zeros_like(H))
    heff = H - 0.5j * decay
    L = -1j * (_spre_post(heff, eye) - _spre_post(eye, heff.conj().T))
    for c in jumps:
        L = L + _spre_post(c, c.conj().T)
    L = L.tocsr()
    L.eliminate_zeros()
    return L


def commutator(H: np.ndarray) -> sp.csr_matrix:
    eye = np.eye(H.shape[0])
    L = (-1j * (_spre_post(H, eye) - _spre_post(eye, H))).tocsr()
    L.eliminate_zeros()
    return L


class MasterEquation:
    """Linear generator L(f) = L0 + f * L1, with f the drive-field fraction."""

    def __init__(self, ops: SystemOperators):
        self.ops = ops
        self.dim = ops.dim
        self.L0 = liouvillian(ops.H0, list(ops.jumps.values()))
        self.L1 = commutator(ops.H_drive)

    def rhs(self, v: np.ndarray, frac: float) -> np.ndarray:
        out = self.L0 @ v
        if frac != 0.0:
            out += frac * (self.L1 @ v)
        return out

    def steady_state(self, frac: float = 1.0) -> np.ndarray:
        d = self.dim
        L = (self.L0 + frac * self.L1).tolil()
        trace_row = np.zeros(d * d, dtype=complex)
        trace_row[:: d + 1] = 1.0
        L[0, :] = trace_row
        b = np.zeros(d * d, dtype=complex)
        b[0] = 1.0
        v = spla.spsolve(L.tocsc(), b)
        if not np.all(np.isfinite(v)):
            raise SolverDivergence("steady state solve failed")
        rho = v.reshape(d, d)
        rho = 0.5 * (rho + rho.conj().T)
        return rho / np.trace(rho).real


def max_step(params: SystemParams) -> float:
    """Integrator step bound, 1/50 of the fastest time scale."""
    fastest = max(params.delta_g, params.delta_e + abs(params.delta_drive),
                  params.g * max(params.alpha, 1.0), 1e-300)
    return min(1 / params.kappa, 1 / params.gamma, 2 * math.pi / fastest) / 50


@dataclass
class G2Curve:
    tau: np.ndarray
    g2: np.ndarray
    coherence: np.ndarray
    drive: np.ndarray
    rate_ss: float
    step: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_ns", "g2", "coh_re", "coh_im", "drive"])
            for row in zip(self.tau * 1e9, self.g2, self.coherence.real,
                           self.coherence.imag, self.drive):
                w.writerow([f"{x:.10g}" for x in row])

    def bin_average(self, bin_width: float, t_max: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean of g2 over bins [k w, (k+1) w), k w < t_max (trapezoid weights)."""
        nb = int(round(t_max / bin_width))
        edges = np.arange(nb + 1) * bin_width
        fine = np.linspace(0.0, edges[-1], nb * 64 + 1)
        vals = np.interp(fine, self.tau, self.g2)
        vals = vals[:-1].reshape(nb, 64)
        nxt = np.interp(fine[64::64], self.tau, self.g2)
        means = (vals.sum(axis=1) - 0.5 * vals[:, 0] + 0.5 * nxt) / 64
        return edges, means


def _relax(frac: float, target: float, kappa: float, h: float) -> float:
    return target + (frac - target) * math.exp(-kappa * h)


def evolve(me: MasterEquation, rho0: np.ndarray, t_max: float, dt: float,
           drive_target, frac0: float = 1.0, observe=None, check_truncation=True):
    """RK4 integration of rho from 0 to t_max, sampled every dt.

    ``drive_target(t)`` gives the commanded drive scale; the field fraction
    relaxes toward it at the cavity rate. ``observe(rho, frac)`` is called at
    every sample and its results are returned as a list.
    """
    p = me.ops.params
    n_sub = max(1, math.ceil(dt / max_step(p) - 1e-9))
    h = dt / n_sub
    n_out = int(round(t_max / dt)) + 1
    d = me.dim
    v = rho0.reshape(-1).astype(complex).copy()
    frac = frac0
    kappa = p.kappa
    results = []
    for k in range(n_out):
        rho = v.reshape(d, d)
        if check_truncation:
            tv, th = fock_tail(rho, me.ops.dims)
            if max(tv, th) > TRUNCATION_LIMIT:
                raise TruncationOverflow(
                    f"Fock tail population {max(tv, th):.2e} at tau={k * dt:.3e}s "
                    f"(n_max_v/n_max_h too small)")
        tr = np.trace(rho).real
        if not np.isfinite(tr) or abs(tr - 1) > 1e-6:
            raise SolverDivergence(f"trace drifted to {tr}")
        if observe is not None:
            results.append(observe(rho, frac))
        if k == n_out - 1:
            break
        for j in range(n_sub):
            t = (k * n_sub + j) * h
            target = drive_target(t + 0.5 * h)
            f_mid = _relax(frac, target, kappa, 0.5 * h)
            f_end = _relax(frac, target, kappa, h)
            k1 = me.rhs(v, frac)
            k2 = me.rhs(v + 0.5 * h * k1, f_mid)
            k3 = me.rhs(v + 0.5 * h * k2, f_mid)
            k4 = me.rhs(v + h * k3, f_end)
            v = v + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            frac = f_end
    return results


def conditional_g2(params: SystemParams, protocol: PulseProtocol | None = None,
                   t_max: float = 4.7e-6, dt: float = 1.64e-9,
                   detection: DetectionConfig | None = None,
                   scheme: LevelScheme | None = None, level_shift: float = 0.0) -> G2Curve:
    """Intensity correlation of the detected H port after a trigger click.

    The trigger collapses the full-drive steady state with the detected-field
    operator; the drive then follows ``protocol`` for that single trigger.
    Gate edges are placed on the integrator grid. ``level_shift`` moves all
    excited levels (see :func:`build_operators`).
    """
    protocol = protocol or PulseProtocol.no_feedback()
    detection = detection or DetectionConfig()
    ops = build_operators(params, scheme, level_shift=level_shift)
    me = MasterEquation(ops)
    field = DetectedField(ops, detection)

    rho_ss = me.steady_state(1.0)
    rate_ss = field.rate(rho_ss, 1.0)
    if rate_ss <= 0:
        raise SolverDivergence("steady-state detection rate is zero")
    c = field.op(1.0)
    rho0 = c @ rho_ss @ c.conj().T
    rho0 = rho0 / np.trace(rho0).real

    n_sub = max(1, math.ceil(dt / max_step(params) - 1e-9))
    h = dt / n_sub
    on = round(protocol.gate_on / h) * h
    off = round(protocol.gate_off / h) * h
    r = protocol.attenuation

    def target(t):
        if protocol.active and on <= t < off:
            return r
        return 1.0

    ig0, igp = LEVELS.index("g0"), LEVELS.index("g+")

    def observe(rho, frac):
        cc = field.op(frac)
        rate = np.real(np.sum((cc.conj().T @ cc) * rho.T))
        coh = reduce_atom(rho, ops.dims)[ig0, igp]
        return rate, coh, frac

    out = evolve(me, rho0, t_max, dt, target, 1.0, observe)
    rates, coh, drive = (np.array(x) for x in zip(*out))
    tau = np.arange(len(rates)) * dt
    return G2Curve(tau=tau, g2=rates / rate_ss, coherence=coh.astype(complex),
                   drive=drive, rate_ss=rate_ss, step=h)
