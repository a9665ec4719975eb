import numpy as np
import pytest

from cqbeats.engine import conditional_g2
from cqbeats.operators import build_operators
from cqbeats.params import (EXCITED, GROUND, LEVELS, LevelScheme, ParameterError, SystemParams,
                            mhz)


def test_dimension_follows_truncation(default_params):
    ops = build_operators(default_params)
    assert ops.dim == 6 * 3 * 3 == 54
    assert default_params.dim == 54


def test_hamiltonian_hermitian(default_params):
    H = build_operators(default_params, drive_scale=0.7).H
    assert np.linalg.norm(H - H.conj().T) <= 1e-12 * np.linalg.norm(H)


def test_zero_detuning_no_drive_leaves_only_couplings():
    p = SystemParams.from_mhz(delta_g=0, delta_e=0, delta_drive=0)
    ops = build_operators(p, drive_scale=0.0)
    H = ops.H
    assert np.array_equal(H, H.conj().T)
    coupling = p.g * (ops.a_v.conj().T @ ops.sigma_pi + ops.a_h.conj().T @ ops.sigma_h)
    coupling = coupling + coupling.conj().T
    np.testing.assert_allclose(H, coupling, atol=1e-20)


def test_drive_scales_linearly(default_params):
    full = build_operators(default_params, drive_scale=1.0)
    part = build_operators(default_params, drive_scale=0.05)
    np.testing.assert_allclose(part.H - part.H0, 0.05 * (full.H - full.H0), rtol=1e-14)


def test_drive_scale_range(default_params):
    with pytest.raises(ParameterError):
        build_operators(default_params, drive_scale=1.2)


def test_zeeman_energies(default_params):
    ops = build_operators(default_params.with_(g=1e-9))
    p = default_params
    for m, (gl, el) in enumerate(zip(GROUND, EXCITED), start=-1):
        i = LEVELS.index(gl) * 9
        j = LEVELS.index(el) * 9
        assert ops.H0[i, i].real == pytest.approx(m * p.delta_g)
        assert ops.H0[j, j].real == pytest.approx(m * p.delta_e - p.delta_drive)


@pytest.mark.parametrize("branching", [(1.0, 0.0), (0.5, 0.5), (0.2, 0.8)])
def test_spontaneous_sum_rule(branching):
    p = SystemParams.from_mhz(branching=branching, n_max_v=1, n_max_h=1)
    ops = build_operators(p)
    total = sum(c.conj().T @ c for c in ops.spontaneous().values())
    for el in EXCITED:
        P = ops.projector(el)
        rate = np.trace(P @ total).real / np.trace(P).real
        assert rate == pytest.approx(p.gamma, rel=1e-12)


def test_v_mode_conserves_magnetic_number(small_params):
    ops = build_operators(small_params)
    m_of = np.repeat([-1, 0, 1, -1, 0, 1], 4)
    V = small_params.g * (ops.a_v.conj().T @ ops.sigma_pi)
    V = V + V.conj().T + ops.H_drive
    rows, cols = np.nonzero(np.abs(V) > 0)
    assert rows.size > 0
    assert np.all(m_of[rows] == m_of[cols])


def test_outer_only_scheme_restricts_sigma_h(small_params):
    ops = build_operators(small_params, LevelScheme.outer_only())
    sig = ops.sigma_h.reshape(6, 4, 6, 4)[:, 0, :, 0]
    nz = {(LEVELS[i], LEVELS[j]) for i, j in zip(*np.nonzero(np.abs(sig) > 0))}
    assert nz == {("g0", "e+"), ("g0", "e-")}


def test_jump_operator_labels(default_params):
    ops = build_operators(default_params)
    assert set(ops.jumps) == {"cavity_v", "cavity_h", "pi", "sigma+", "sigma-"}
    np.testing.assert_allclose(ops.jumps["cavity_v"], np.sqrt(2 * default_params.kappa) * ops.a_v)


@pytest.mark.parametrize("kw", [
    dict(g=0.0), dict(kappa=-1.0), dict(delta_e=1.0, delta_g=2.0),
    dict(branching=(0.7, 0.7)), dict(branching=(-0.1, 1.1)), dict(n_max_v=0), dict(alpha=-1),
])
def test_invalid_parameters(kw):
    with pytest.raises(ParameterError):
        SystemParams.from_mhz(**kw)


def test_detuning_defaults_to_level_structure():
    p = SystemParams.from_mhz(delta_g=2.0, delta_e=2.6, delta_drive=0.1)
    assert p.detuning == pytest.approx(mhz(0.5))
    assert p.with_(delta_eff=mhz(0.9)).detuning == pytest.approx(mhz(0.9))


def test_rotating_frame_invariance():
    """Shifting the drive detuning and every excited level by x leaves g2 unchanged."""
    p = SystemParams.from_mhz(alpha=0.5)
    x = mhz(0.4)
    moved = p.with_(delta_drive=p.delta_drive + x)
    ref = conditional_g2(p, t_max=0.6e-6, dt=2e-9)
    same = conditional_g2(moved, t_max=0.6e-6, dt=2e-9, level_shift=x)
    np.testing.assert_allclose(same.g2, ref.g2, rtol=1e-9)
    # moving only the drive is a different physical situation
    other = conditional_g2(moved, t_max=0.6e-6, dt=2e-9)
    assert np.max(np.abs(other.g2 - ref.g2)) > 1e-3
