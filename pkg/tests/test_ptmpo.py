from __future__ import annotations

import numpy as np
import pytest
from conftest import random_density

from ptace.closures import ObservableSpec
from ptace.errors import DimensionError, PTMPOError, ValidationError
from ptace.liouville import ModeSpec, SystemPropagatorSchedule
from ptace.models import SPIN_X, SPIN_Z, central_spin_modes
from ptace.oracle import exact_reference, trotter_reference
from ptace.propagate import propagate
from ptace.ptmpo import (
    balance_norms,
    build_ace,
    combine_mode,
    load_ptmpo,
    save_ptmpo,
    sweep_backward,
    sweep_forward,
    trivial_pt,
)

RHO0 = np.array([[0.6, 0.2 - 0.1j], [0.2 + 0.1j, 0.4]])


def contract(pt):
    """Full contraction of the chain: the discretized influence functional."""
    f = pt.tensors[0].reshape(pt.tensors[0].shape[0], -1)
    for q in pt.tensors[1:]:
        f = np.tensordot(q.reshape(q.shape[0], -1, q.shape[3]), f, axes=(2, 0)).reshape(q.shape[0], -1)
    assert f.shape[0] == 1
    return f.reshape(-1)


def _driven_schedule(dt):
    return SystemPropagatorSchedule(2, dt, 0.7 * SPIN_X + 0.2 * SPIN_Z)


def test_trivial_pt_structure():
    pt = trivial_pt(3, 2, 0.1)
    assert len(pt.tensors) == 3
    for q in pt.tensors:
        assert q.shape == (1, 4, 4, 1)
        assert np.array_equal(q[0, :, :, 0], np.eye(4))
    assert all(np.array_equal(v, [1.0]) for v in pt.closures.trace)
    assert pt.bond_dims == [1, 1, 1, 1]


def test_trivial_pt_gives_free_dynamics():
    sched = _driven_schedule(0.1)
    series = propagate(trivial_pt(6, 2, 0.1), sched, RHO0)
    vec = RHO0.reshape(-1)
    for l in range(1, 7):
        vec = sched.step(l) @ vec
        assert np.allclose(series.rho[l].reshape(-1), vec, atol=1e-14)


def test_trivial_pt_rejects_bad_input():
    with pytest.raises(ValidationError):
        trivial_pt(0, 2, 0.1)
    with pytest.raises(ValidationError):
        trivial_pt(3, 2, -0.1)


def test_zero_modes_give_trivial_pt():
    pt = build_ace([], 4, 0.1, 1e-8, d_sys=2)
    assert pt.bond_dims == [1] * 5
    assert np.allclose(contract(pt), contract(trivial_pt(4, 2, 0.1)))


def test_one_spin_mode_gives_bond_four():
    pt = combine_mode(trivial_pt(5, 2, 0.1), central_spin_modes(1, 1.0, 0)[0])
    assert pt.bond_dims == [1, 4, 4, 4, 4, 1]


def test_decoupled_mode_leaves_dynamics_unchanged():
    mode = ModeSpec(2, np.zeros((4, 4)), random_density(np.random.default_rng(5), 2))
    sched = _driven_schedule(0.1)
    pt = build_ace([mode], 6, 0.1, 1e-12)
    assert pt.max_bond == 1
    ref = propagate(trivial_pt(6, 2, 0.1), sched, RHO0)
    assert np.allclose(propagate(pt, sched, RHO0).rho, ref.rho, atol=1e-12)


@pytest.mark.parametrize("n_modes, n_steps", [(2, 4), (3, 6), (3, 8)])
def test_exact_build_matches_trotter_oracle(n_modes, n_steps):
    modes = central_spin_modes(n_modes, 1.3, seed=n_modes)
    sched = _driven_schedule(0.15)
    pt = build_ace(modes, n_steps, 0.15, 0.0)
    series = propagate(pt, sched, RHO0)
    rhos, _ = trotter_reference(modes, sched, RHO0, n_steps)
    assert np.max(np.abs(series.rho - rhos)) < 1e-9


def test_uncompressed_combination_matches_oracle():
    modes = central_spin_modes(2, 1.0, seed=11)
    sched = _driven_schedule(0.2)
    pt = trivial_pt(4, 2, 0.2)
    for m in modes:
        pt = combine_mode(pt, m)
    rhos, _ = trotter_reference(modes, sched, RHO0, 4)
    assert np.max(np.abs(propagate(pt, sched, RHO0).rho - rhos)) < 1e-9


def test_exact_sweeps_preserve_contraction():
    modes = central_spin_modes(2, 1.0, seed=2)
    pt = combine_mode(combine_mode(trivial_pt(4, 2, 0.1), modes[0]), modes[1])
    before = contract(pt)
    fw = sweep_forward(pt, 0.0)
    assert np.max(np.abs(contract(fw) - before)) < 1e-10
    bw = sweep_backward(fw, 0.0)
    assert np.max(np.abs(contract(bw) - before)) < 1e-10


def test_sweeps_keep_closures_consistent():
    modes = central_spin_modes(2, 1.0, seed=4)
    sched = _driven_schedule(0.1)
    pt = combine_mode(combine_mode(trivial_pt(5, 2, 0.1), modes[0]), modes[1])
    ref = propagate(pt, sched, RHO0).rho
    fw = sweep_forward(pt, 0.0)
    assert np.max(np.abs(propagate(fw, sched, RHO0).rho - ref)) < 1e-9
    assert np.max(np.abs(propagate(sweep_backward(fw, 0.0), sched, RHO0).rho - ref)) < 1e-9


def test_backward_sweep_never_grows_bonds():
    modes = central_spin_modes(3, 1.0, seed=6)
    pt = trivial_pt(8, 2, 0.1)
    for m in modes:
        pt = combine_mode(pt, m)
    fw = sweep_forward(pt, 1e-6)
    bw = sweep_backward(fw, 1e-6)
    assert all(b <= f for b, f in zip(bw.bond_dims, fw.bond_dims))


def test_sweeping_trivial_pt_keeps_unit_bonds():
    pt = trivial_pt(5, 2, 0.1)
    assert sweep_backward(sweep_forward(pt, 0.1), 0.1).bond_dims == [1] * 6


def test_bond_dims_monotone_in_eps():
    modes = central_spin_modes(5, 1.0, seed=9)
    peaks = [build_ace(modes, 30, 0.05, eps).max_bond for eps in (1e-6, 1e-8, 1e-10)]
    assert peaks[0] <= peaks[1] <= peaks[2]


def test_symmetric_combination_is_second_order():
    modes = central_spin_modes(2, 1.0, seed=3)
    errs = []
    for dt in (0.2, 0.1):
        n = int(round(2.0 / dt))
        series = propagate(build_ace(modes, n, dt, 0.0), SystemPropagatorSchedule(2, dt), RHO0)
        rhos, _ = exact_reference(np.zeros((2, 2)), modes, RHO0, dt, n)
        errs.append(np.max(np.abs(series.rho - rhos)))
    assert errs[0] / errs[1] >= 3.5


def test_balance_norms_is_a_gauge_change():
    modes = central_spin_modes(2, 1.0, seed=8)
    pt = build_ace(modes, 6, 0.1, 1e-10)
    sched = _driven_schedule(0.1)
    before = propagate(pt, sched, RHO0).rho
    scaled = balance_norms(pt.copy())
    assert np.allclose(propagate(scaled, sched, RHO0).rho, before, atol=1e-12)


def test_on_mode_reports_progress_and_can_abort():
    modes = central_spin_modes(3, 1.0, seed=1)
    seen = []
    build_ace(modes, 5, 0.1, 1e-10, on_mode=lambda k, pt: seen.append((k, pt.n_modes)))
    assert seen == [(0, 1), (1, 2), (2, 3)]

    def stop(k, pt):
        if k == 1:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        build_ace(modes, 5, 0.1, 1e-10, on_mode=stop)


def test_build_rejects_mismatched_modes():
    qutrit_env = ModeSpec(2, np.zeros((6, 6)), np.diag([1.0, 0.0]))
    with pytest.raises(DimensionError):
        build_ace([central_spin_modes(1, 1.0, 0)[0], qutrit_env], 3, 0.1, 1e-8)
    with pytest.raises(ValidationError):
        build_ace([], 3, 0.1, 1e-8)
    with pytest.raises(ValidationError):
        build_ace(central_spin_modes(1, 1.0, 0), 3, 0.1, 1.5)


def test_validate_catches_broken_bonds():
    pt = build_ace(central_spin_modes(2, 1.0, 1), 4, 0.1, 1e-10)
    pt.tensors[1] = pt.tensors[1][:, :, :, :1]
    with pytest.raises(PTMPOError):
        pt.validate()


def _obs():
    return [ObservableSpec("sx_env", np.eye(2), [SPIN_X, SPIN_X])]


def test_serialization_round_trip(tmp_path):
    pt = build_ace(central_spin_modes(2, 1.0, 1), 5, 0.1, 1e-10, _obs())
    path = tmp_path / "pt.bin"
    save_ptmpo(pt, path)
    assert path.read_bytes()[:4] == b"PTM1"
    back = load_ptmpo(path)
    assert (back.n_steps, back.d_sys, back.dt, back.n_modes) == (pt.n_steps, pt.d_sys, pt.dt, pt.n_modes)
    assert back.peak_bond_dims == pt.peak_bond_dims
    for a, b in zip(pt.tensors, back.tensors):
        assert np.array_equal(a, b)
    for a, b in zip(pt.closures.observables["sx_env"].vectors, back.closures.observables["sx_env"].vectors):
        assert np.array_equal(a, b)
    sched = _driven_schedule(0.1)
    assert np.allclose(propagate(pt, sched, RHO0).rho, propagate(back, sched, RHO0).rho, rtol=0, atol=1e-15)
    for a, b in zip(pt.closures.trace, back.closures.trace):
        assert np.array_equal(a, b)


def test_load_rejects_corrupt_files(tmp_path):
    pt = build_ace(central_spin_modes(1, 1.0, 1), 3, 0.1, 1e-10)
    path = tmp_path / "pt.bin"
    save_ptmpo(pt, path)
    raw = path.read_bytes()
    for name, data in {"magic": b"XXXX" + raw[4:], "short": raw[:-3], "trailing": raw + b"\0"}.items():
        bad = tmp_path / name
        bad.write_bytes(data)
        with pytest.raises(ValidationError):
            load_ptmpo(bad)
