"""Hamiltonian and collapse operators for one atom in a two-mode cavity.

Basis ordering is atom (x) Fock(V) (x) Fock(H) with the atomic levels in the
order of :data:`cqbeats.params.LEVELS`. The frame rotates at the drive
frequency.

The driven V mode is written in a displaced frame, a_V = alpha(t) + b_V, where
alpha(t) is the empty-cavity coherent amplitude. The coherent part of the
drive then appears as a classical pi-coupling g*alpha on the atom, and b_V
holds only the field scattered by the atom, which keeps the V truncation
small even for several drive photons.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import GROUND, EXCITED, LEVELS, LevelScheme, ParameterError, SystemParams


def _ket_bra(i: str, j: str) -> np.ndarray:
    op = np.zeros((6, 6), dtype=complex)
    op[LEVELS.index(i), LEVELS.index(j)] = 1.0
    return op


def destroy(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


@dataclass(frozen=True)
class SystemOperators:
    """Operators of the open system at a fixed drive scale.

    ``H`` equals ``H0 + drive_scale * H_drive``. ``jumps`` maps a channel label
    to its collapse operator C; the master equation is
    drho/dt = -i[H, rho] + sum_k D[C_k] rho.
    """

    params: SystemParams
    scheme: LevelScheme
    drive_scale: float
    H0: np.ndarray
    H_drive: np.ndarray
    jumps: dict[str, np.ndarray]
    a_v: np.ndarray
    a_h: np.ndarray
    sigma_h: np.ndarray
    sigma_pi: np.ndarray
    dims: tuple[int, int, int] = field(default=(6, 3, 3))

    @property
    def H(self) -> np.ndarray:
        return self.H0 + self.drive_scale * self.H_drive

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def decay_sum(self) -> np.ndarray:
        return sum(c.conj().T @ c for c in self.jumps.values())

    @property
    def H_eff(self) -> np.ndarray:
        return self.H - 0.5j * self.decay_sum

    def spontaneous(self) -> dict[str, np.ndarray]:
        return {k: c for k, c in self.jumps.items() if not k.startswith("cavity")}

    def atom_op(self, op6: np.ndarray) -> np.ndarray:
        _, nv, nh = self.dims
        return np.kron(op6, np.eye(nv * nh))

    def projector(self, level: str) -> np.ndarray:
        return self.atom_op(_ket_bra(level, level))


def build_operators(params: SystemParams, scheme: LevelScheme | None = None,
                    drive_scale: float = 1.0, level_shift: float = 0.0) -> SystemOperators:
    """Assemble H, the drive term and all collapse operators.

    ``level_shift`` moves every excited level by the same amount (a shift of
    the atomic transition frequency); combined with the same shift of
    ``delta_drive`` it leaves H unchanged.
    """
    scheme = scheme or LevelScheme()
    if params.n_max_v < 1 or params.n_max_h < 1:
        raise ParameterError("Fock truncation must keep at least one photon per mode")
    if not 0.0 <= drive_scale <= 1.0:
        raise ParameterError("drive_scale must lie in [0, 1]")
    nv, nh = params.n_max_v + 1, params.n_max_h + 1
    iv, ih = np.eye(nv), np.eye(nh)

    def atom(op6):
        return np.kron(np.kron(op6, iv), ih)

    a_v = np.kron(np.kron(np.eye(6), destroy(nv)), ih)
    a_h = np.kron(np.kron(np.eye(6), iv), destroy(nh))

    e_atom = np.zeros((6, 6), dtype=complex)
    for m, (gl, el) in enumerate(zip(GROUND, EXCITED), start=-1):
        e_atom[LEVELS.index(gl), LEVELS.index(gl)] = m * params.delta_g
        e_atom[LEVELS.index(el), LEVELS.index(el)] = (
            m * params.delta_e - params.delta_drive + level_shift)

    pi6 = np.zeros((6, 6), dtype=complex)
    sig6 = np.zeros((6, 6), dtype=complex)
    for lower, upper, pol, w in scheme.transitions():
        if pol == "pi":
            pi6 += w * _ket_bra(lower, upper)
        else:
            sig6 += w * _ket_bra(lower, upper)
    sigma_pi = atom(pi6)
    sigma_h = atom(sig6)

    g = params.g
    H0 = atom(e_atom)
    H0 = H0 + g * (a_v.conj().T @ sigma_pi + sigma_pi.conj().T @ a_v)
    H0 = H0 + g * (a_h.conj().T @ sigma_h + sigma_h.conj().T @ a_h)
    H_drive = g * params.alpha * (sigma_pi + sigma_pi.conj().T)

    b_pi, b_sigma = params.branching
    gam = params.gamma
    jumps = {
        "cavity_v": np.sqrt(2 * params.kappa) * a_v,
        "cavity_h": np.sqrt(2 * params.kappa) * a_h,
    }
    # one operator per photon polarization: emissions from different
    # sublevels with the same polarization are indistinguishable
    pi_lower = sum(atom(_ket_bra(gl, el)) for gl, el in zip(GROUND, EXCITED))
    jumps["pi"] = np.sqrt(gam * b_pi) * pi_lower
    half = np.sqrt(0.5)
    jumps["sigma+"] = np.sqrt(gam * b_sigma) * (
        atom(_ket_bra("g0", "e+")) + half * atom(_ket_bra("g-", "e0")))
    jumps["sigma-"] = np.sqrt(gam * b_sigma) * (
        atom(_ket_bra("g0", "e-")) + half * atom(_ket_bra("g+", "e0")))

    return SystemOperators(
        params=params, scheme=scheme, drive_scale=float(drive_scale),
        H0=H0, H_drive=H_drive, jumps=jumps, a_v=a_v, a_h=a_h,
        sigma_h=sigma_h, sigma_pi=sigma_pi, dims=(6, nv, nh),
    )


def reduce_atom(rho: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """Partial trace over both cavity modes."""
    na, nv, nh = dims
    r = rho.reshape(na, nv * nh, na, nv * nh)
    return np.einsum("iaja->ij", r)


def fock_tail(rho: np.ndarray, dims: tuple[int, int, int]) -> tuple[float, float]:
    """Population in the highest retained Fock state of (V, H)."""
    na, nv, nh = dims
    p = np.real(np.diag(rho)).reshape(na, nv, nh)
    return float(p[:, -1, :].sum()), float(p[:, :, -1].sum())
