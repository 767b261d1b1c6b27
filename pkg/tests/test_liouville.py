from __future__ import annotations

import numpy as np
import pytest
from conftest import random_complex, random_density
from hypothesis import given
from hypothesis import strategies as st

from ptace.errors import DimensionError, UnsupportedConfigurationError, ValidationError
from ptace.liouville import (
    ModeSpec,
    SystemPropagatorSchedule,
    devectorize,
    fermion_parity_operator,
    hamiltonian_liouvillian,
    joint_liouvillian,
    lindblad_dissipator,
    mode_propagator,
    operator_covector,
    split_order,
    superoperator,
    trace_covector,
    vectorize,
)
from ptace.numerics import matrix_exp

SZ = np.diag([0.5, -0.5]).astype(complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
LOWER = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|


def _hermitian(rng, d):
    a = random_complex(rng, d, d)
    return a + a.conj().T


def test_vectorize_examples():
    assert np.array_equal(vectorize(np.diag([1.0, 0.0])), [1, 0, 0, 0])
    assert np.allclose(vectorize(SX / 2), [0, 0.5, 0.5, 0])


def test_vectorize_round_trip(rng):
    rho = random_complex(rng, 3, 3)
    assert np.array_equal(devectorize(vectorize(rho)), rho)
    assert vectorize(rho)[1 * 3 + 2] == rho[1, 2]


def test_vectorize_rejects_non_square():
    with pytest.raises(DimensionError):
        vectorize(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        devectorize(np.ones(5))


def test_trace_covector(rng):
    assert np.array_equal(trace_covector(2), [1, 0, 0, 1])
    assert np.array_equal(trace_covector(1), [1])
    rho = random_complex(rng, 3, 3)
    assert np.isclose(trace_covector(3) @ vectorize(rho), np.trace(rho))


def test_operator_covector_gives_expectation(rng):
    rho = random_density(rng, 4)
    op = random_complex(rng, 4, 4)
    assert np.isclose(operator_covector(op) @ vectorize(rho), np.trace(op @ rho))


def test_superoperator_convention(rng):
    a, b, rho = (random_complex(rng, 3, 3) for _ in range(3))
    assert np.allclose(superoperator(a, b) @ vectorize(rho), vectorize(a @ rho @ b))


def test_liouvillian_examples():
    assert np.array_equal(hamiltonian_liouvillian(np.zeros((2, 2))), np.zeros((4, 4)))
    assert np.allclose(hamiltonian_liouvillian(SZ), np.diag([0, -1j, 1j, 0]))


def test_liouvillian_matches_commutator(rng):
    h = _hermitian(rng, 4)
    rho = random_complex(rng, 4, 4)
    lhs = hamiltonian_liouvillian(h) @ vectorize(rho)
    assert np.max(np.abs(lhs - vectorize(-1j * (h @ rho - rho @ h)))) < 1e-12


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5))
def test_trace_annihilates_liouvillian(seed, d):
    h = _hermitian(np.random.default_rng(seed), d)
    assert np.max(np.abs(trace_covector(d) @ hamiltonian_liouvillian(h))) < 1e-12


def test_liouvillian_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        hamiltonian_liouvillian(np.array([[0, 1], [0, 0]]))


def test_lindblad_decay_is_trace_preserving(rng):
    gen = lindblad_dissipator(LOWER, 0.7)
    assert np.max(np.abs(trace_covector(2) @ gen)) < 1e-14
    rho = np.diag([0.0, 1.0]).astype(complex)
    out = devectorize(matrix_exp(gen * 2.0) @ vectorize(rho))
    assert np.isclose(out[1, 1].real, np.exp(-1.4))


def test_split_order_matches_partial_trace(rng):
    h = _hermitian(rng, 6)
    rho = random_density(rng, 6)
    sup = split_order(hamiltonian_liouvillian(h), 2, 3)
    vec = rho.reshape(2, 3, 2, 3).transpose(0, 2, 1, 3).reshape(-1)
    out = (sup @ vec).reshape(4, 9) @ trace_covector(3)
    expected = -1j * (h @ rho - rho @ h)
    assert np.allclose(out, vectorize(np.trace(expected.reshape(2, 3, 2, 3), axis1=1, axis2=3)))


def _mode(h, rho, fermionic=False):
    return ModeSpec(rho.shape[0], h, rho, fermionic=fermionic)


def test_zero_hamiltonian_gives_identity_propagator():
    mode = _mode(np.zeros((4, 4)), np.diag([1.0, 0.0]))
    assert np.allclose(mode_propagator(mode, 2, 0.3), np.eye(16))


def test_fermionic_parity_is_an_involution():
    mode = _mode(np.zeros((4, 4)), np.diag([1.0, 0.0]), fermionic=True)
    b = mode_propagator(mode, 2, 0.1)
    assert not np.allclose(b, np.eye(16))
    assert np.allclose(b @ b, np.eye(16))
    p = fermion_parity_operator()
    assert np.allclose(b, split_order(np.kron(p, p), 2, 2))


def test_jaynes_cummings_propagator_matches_joint_exponential(rng):
    # resonant JC with one photon level: sigma- on the emitter, a on the mode
    a = LOWER
    h = 0.8 * (np.kron(a.conj().T, a) + np.kron(a, a.conj().T))
    mode = _mode(h, np.diag([1.0, 0.0]))
    rho = random_density(rng, 4)
    b = mode_propagator(mode, 2, 0.37)
    full = matrix_exp(joint_liouvillian(h, 2, 2) * 0.37)
    assert np.max(np.abs(b - full)) < 1e-12
    vec = rho.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(-1)
    u = matrix_exp(-0.37j * h)
    expected = (u @ rho @ u.conj().T).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(-1)
    assert np.max(np.abs(b @ vec - expected)) < 1e-12


def test_propagator_preserves_hermiticity(rng):
    h = _hermitian(rng, 6)
    mode = _mode(h, random_density(rng, 3))
    rho = random_density(rng, 6)
    vec = rho.reshape(2, 3, 2, 3).transpose(0, 2, 1, 3).reshape(-1)
    out = (mode_propagator(mode, 2, 0.2) @ vec).reshape(2, 2, 3, 3).transpose(0, 2, 1, 3).reshape(6, 6)
    assert np.max(np.abs(out - out.conj().T)) < 1e-10


def test_parity_commutes_with_number_conserving_hopping():
    h = 0.3 * np.kron(np.diag([0, 1.0]), np.eye(2)) + 1.1 * (
        np.kron(LOWER.conj().T, LOWER) + np.kron(LOWER, LOWER.conj().T)
    ) + 0.7 * np.kron(np.eye(2), np.diag([0, 1.0]))
    u = matrix_exp(-0.25j * h)
    p = fermion_parity_operator()
    assert np.max(np.abs(u @ p - p @ u)) < 1e-10


def test_fermionic_mode_requires_qubits():
    mode = _mode(np.zeros((6, 6)), np.diag([1.0, 0.0, 0.0]), fermionic=True)
    with pytest.raises(UnsupportedConfigurationError):
        mode_propagator(mode, 2, 0.1)


def test_mode_spec_validation():
    with pytest.raises(ValidationError):
        _mode(np.triu(np.ones((4, 4))), np.diag([1.0, 0.0]))
    with pytest.raises(ValidationError):
        _mode(np.zeros((4, 4)), np.diag([0.7, 0.7]))
    with pytest.raises(ValidationError):
        _mode(np.zeros((4, 4)), np.diag([1.5, -0.5]))
    with pytest.raises(DimensionError):
        ModeSpec(3, np.zeros((4, 4)), np.eye(3) / 3)


def test_schedule_is_trace_preserving():
    sched = SystemPropagatorSchedule(2, 0.1, lambda t: np.cos(t) * SX, dissipators=[(LOWER, 0.5)])
    for step in (1, 5, 17):
        assert np.max(np.abs(trace_covector(2) @ sched.step(step) - trace_covector(2))) < 1e-10


def test_schedule_uses_midpoint_rule():
    seen = []

    def h(t):
        seen.append(t)
        return t * SZ

    sched = SystemPropagatorSchedule(2, 0.2, h, t0=1.0)
    m = sched.step(3)
    assert np.isclose(seen[-1], 1.0 + 2.5 * 0.2)
    assert np.allclose(m, matrix_exp(hamiltonian_liouvillian(seen[-1] * SZ) * 0.2))


def test_schedule_constant_default_is_identity():
    assert np.allclose(SystemPropagatorSchedule(3, 0.5).step(4), np.eye(9))


def test_schedule_rejects_bad_dt():
    with pytest.raises(ValidationError):
        SystemPropagatorSchedule(2, 0.0)
