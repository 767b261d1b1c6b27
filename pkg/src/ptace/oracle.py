"""Brute-force joint system-environment propagation for small instances.

These routines keep the full density matrix of the system and every mode and
serve as references for the PT-MPO machinery. ``trotter_reference`` applies
exactly the propagator sequence an ACE build encodes, so at ``eps = 0`` the
two must agree to rounding; ``exact_reference`` exponentiates the total
Hamiltonian without any splitting.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .closures import ObservableSpec
from .errors import DimensionError, UnsupportedConfigurationError
from .liouville import ModeSpec, SystemPropagatorSchedule, fermion_parity_operator
from .numerics import matrix_exp

_PARITY = np.diag([1.0, -1.0]).astype(np.complex128)
MAX_HILBERT_DIM = 512


class JointState:
    """Density matrix of system (x) mode_1 (x) ... (x) mode_N as a tensor.

    Stored with shape ``(d, m_1, ..., m_N, d, m_1, ..., m_N)``; axis 0 is the
    system and axis ``k + 1`` mode ``k``.
    """

    def __init__(self, rho_sys: np.ndarray, modes: Sequence[ModeSpec]) -> None:
        rho_sys = np.asarray(rho_sys, dtype=np.complex128)
        self.dims = [rho_sys.shape[0]] + [m.mode_dim for m in modes]
        total = int(np.prod(self.dims))
        if total > MAX_HILBERT_DIM:
            raise DimensionError(f"joint Hilbert dimension {total} exceeds the oracle limit {MAX_HILBERT_DIM}")
        full = rho_sys
        for m in modes:
            full = np.kron(full, m.initial_state)
        self.n_sub = len(self.dims)
        self.tensor = full.reshape(self.dims + self.dims)

    @property
    def matrix(self) -> np.ndarray:
        n = int(np.prod(self.dims))
        return self.tensor.reshape(n, n)

    def apply_unitary(self, u: np.ndarray, axes: Sequence[int]) -> None:
        """``rho -> U rho U^+`` with ``U`` acting on the listed subsystems."""
        sub = [self.dims[a] for a in axes]
        u4 = u.reshape(sub + sub)
        k = len(axes)
        n = self.n_sub
        # ket side
        t = np.tensordot(u4, self.tensor, axes=(list(range(k, 2 * k)), list(axes)))
        t = np.moveaxis(t, list(range(k)), list(axes))
        # bra side
        bra_axes = [n + a for a in axes]
        t = np.tensordot(t, u4.conj(), axes=(bra_axes, list(range(k, 2 * k))))
        self.tensor = np.moveaxis(t, list(range(2 * n - k, 2 * n)), bra_axes)

    def apply_system_superoperator(self, m: np.ndarray) -> None:
        d = self.dims[0]
        n = self.n_sub
        t = np.moveaxis(self.tensor, n, 1)  # (s, s', envs..., envs...)
        shape = t.shape
        t = (m @ t.reshape(d * d, -1)).reshape(shape)
        self.tensor = np.moveaxis(t, 1, n)

    def reduced_system(self) -> np.ndarray:
        d = self.dims[0]
        e = int(np.prod(self.dims[1:]))
        mat = self.tensor.reshape(d, e, d, e)
        return np.einsum("aibi->ab", mat)

    def expectation(self, op_full: np.ndarray) -> complex:
        return complex(np.trace(op_full @ self.matrix))


def embed(ops: dict[int, np.ndarray], dims: Sequence[int]) -> np.ndarray:
    """Kronecker product with ``ops[i]`` on subsystem ``i`` and identities elsewhere."""
    out = np.ones((1, 1), dtype=np.complex128)
    for i, dim in enumerate(dims):
        out = np.kron(out, ops.get(i, np.eye(dim, dtype=np.complex128)))
    return out


def observable_matrix(spec: ObservableSpec, modes: Sequence[ModeSpec]) -> np.ndarray:
    """Full-space matrix of ``sum_k A (x) O^(k)``, with parity strings when requested.

    The string of mode ``k`` covers every mode incorporated after ``k``, which
    is how the closure iteration carries it.
    """
    dims = [spec.system_part.shape[0]] + [m.mode_dim for m in modes]
    total = np.zeros((int(np.prod(dims)),) * 2, dtype=np.complex128)
    for k, part in enumerate(spec.env_parts):
        if part is None or k >= len(modes):
            continue
        ops = {0: spec.system_part, k + 1: np.asarray(part, dtype=np.complex128)}
        if spec.fermionic_string:
            for j in range(k + 1, len(modes)):
                ops[j + 1] = _PARITY
        total += embed(ops, dims)
    return total


def _mode_unitary(mode: ModeSpec, tau: float) -> np.ndarray:
    u = matrix_exp(-1j * tau * mode.joint_hamiltonian)
    if mode.fermionic:
        if mode.d_sys != 2 or mode.mode_dim != 2:
            raise UnsupportedConfigurationError("fermionic modes require d_sys == 2 and mode_dim == 2")
        u = u @ fermion_parity_operator()
    return u


def trotter_reference(
    modes: Sequence[ModeSpec],
    schedule: SystemPropagatorSchedule,
    rho0: np.ndarray,
    n_steps: int,
    observables: Sequence[ObservableSpec] = (),
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Propagate with the splitting an ACE build encodes.

    Each step applies the system propagator ``M_l`` and then the half-step
    mode propagators in the order ``N, ..., 1, 1, ..., N`` (mode ``N`` acts
    first and last).

    Returns:
        Reduced states of shape ``(n_steps + 1, d, d)`` and the observable
        values per name.
    """
    state = JointState(rho0, modes)
    half = [_mode_unitary(m, 0.5 * schedule.dt) for m in modes]
    obs_mats = {o.name: observable_matrix(o, modes) for o in observables}
    d = state.dims[0]
    rhos = np.empty((n_steps + 1, d, d), dtype=np.complex128)
    values = {name: np.empty(n_steps + 1, dtype=np.complex128) for name in obs_mats}

    def record(l):
        rhos[l] = state.reduced_system()
        for name, mat in obs_mats.items():
            values[name][l] = state.expectation(mat)

    record(0)
    order = list(range(len(modes)))
    for l in range(1, n_steps + 1):
        state.apply_system_superoperator(schedule.step(l))
        for k in order[::-1] + order:
            state.apply_unitary(half[k], [0, k + 1])
        record(l)
    return rhos, values


def total_hamiltonian(h_sys: np.ndarray, modes: Sequence[ModeSpec]) -> np.ndarray:
    """``H_S + sum_k H_E^(k)`` on the joint space (non-fermionic modes only)."""
    if any(m.fermionic for m in modes):
        raise UnsupportedConfigurationError("the exact oracle does not build Jordan-Wigner strings")
    h_sys = np.asarray(h_sys, dtype=np.complex128)
    dims = [h_sys.shape[0]] + [m.mode_dim for m in modes]
    h = embed({0: h_sys}, dims)
    d = dims[0]
    for k, m in enumerate(modes):
        # permute the (system, mode k) operator into place
        hk = m.joint_hamiltonian.reshape(d, m.mode_dim, d, m.mode_dim)
        rest = int(np.prod(dims[1 : k + 1]))
        after = int(np.prod(dims[k + 2 :]))
        full = np.einsum(
            "aibj,pq,rs->apirbqjs", hk, np.eye(rest), np.eye(after)
        ).reshape(h.shape)
        h += full
    return h


def exact_reference(
    h_sys: np.ndarray,
    modes: Sequence[ModeSpec],
    rho0: np.ndarray,
    dt: float,
    n_steps: int,
    observables: Sequence[ObservableSpec] = (),
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Exact unitary propagation under a time-independent total Hamiltonian."""
    h = total_hamiltonian(h_sys, modes)
    u = matrix_exp(-1j * dt * h)
    state = JointState(rho0, modes)
    obs_mats = {o.name: observable_matrix(o, modes) for o in observables}
    d = state.dims[0]
    rhos = np.empty((n_steps + 1, d, d), dtype=np.complex128)
    values = {name: np.empty(n_steps + 1, dtype=np.complex128) for name in obs_mats}
    axes = list(range(state.n_sub))
    for l in range(n_steps + 1):
        if l:
            state.apply_unitary(u, axes)
        rhos[l] = state.reduced_system()
        for name, mat in obs_mats.items():
            values[name][l] = state.expectation(mat)
    return rhos, values


def single_excitation_populations(omegas, gs, times, detuning: float = 0.0) -> np.ndarray:
    """Excited-state population of an emitter coupled to harmonic modes, one excitation.

    For the rotating-wave Hamiltonian ``detuning |e><e| + sum_k w_k a_k^+ a_k
    + g_k (a_k^+ |g><e| + h.c.)`` started in ``|e, vac>``, the dynamics stays
    in the span of ``|e, vac>`` and ``|g, 1_k>``. Diagonalizing that
    ``(N + 1)``-dimensional block gives the exact amplitudes at any time, for
    any number of modes, without truncation or Trotter error.
    """
    omegas = np.asarray(omegas, dtype=float)
    gs = np.asarray(gs, dtype=float)
    n = len(omegas)
    h = np.zeros((n + 1, n + 1))
    h[0, 0] = detuning
    h[0, 1:] = gs
    h[1:, 0] = gs
    h[1:, 1:] = np.diag(omegas)
    w, v = np.linalg.eigh(h)
    amp = (v[0, :] ** 2)[None, :] * np.exp(-1j * np.outer(np.asarray(times, dtype=float), w))
    return np.abs(amp.sum(axis=1)) ** 2


def free_fermion_correlations(h: np.ndarray, occupied, times) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-body correlations of a quadratic fermionic Hamiltonian.

    ``h`` is the single-particle matrix (dot plus lead levels and hoppings).
    The initial state is the Slater determinant with the orbitals in
    ``occupied`` filled. Returns ``C(t)`` with ``C_ij = <c_j^+ c_i>`` and its
    time derivative ``-i[h, C]``, both of shape ``(len(times), n, n)``. Lead
    particle currents are diagonal sums of the derivative over a lead's modes.
    """
    h = np.asarray(h, dtype=np.complex128)
    n = h.shape[0]
    c0 = np.zeros((n, n), dtype=np.complex128)
    idx = np.asarray(occupied, dtype=int)
    c0[idx, idx] = 1.0
    w, v = np.linalg.eigh(h)
    c0_eig = v.conj().T @ c0 @ v
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), w))
    corr = np.einsum("ia,ta,ab,tb,jb->tij", v, phases, c0_eig, phases.conj(), v.conj(), optimize=True)
    deriv = -1j * (np.einsum("ik,tkj->tij", h, corr) - np.einsum("tik,kj->tij", corr, h))
    return corr, deriv
