"""Liouville-space representation of states, generators and propagators.

Index conventions used everywhere in the package:

* a ``d x d`` density matrix is vectorized row-major, ``alpha = nu * d + mu``
  (ket index slow, bra index fast);
* on a system (x) mode product space the Liouville index is split as
  ``(alpha, beta) = ((nu, mu), (xi, eta))`` with the system pair slower than
  the environment pair, while Hilbert-space operators are ordered
  ``|nu> (x) |xi>`` (system slow).
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimensionError, UnsupportedConfigurationError, ValidationError
from .numerics import as_operator, matrix_exp

HERMITIAN_TOL = 1e-8


def vectorize(rho) -> np.ndarray:
    """Map a square matrix onto its Liouville vector."""
    rho = as_operator(rho, "rho")
    if rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got {rho.shape}")
    return rho.reshape(-1).copy()


def devectorize(vec, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec, dtype=np.complex128).reshape(-1)
    if d is None:
        d = int(round(np.sqrt(vec.size)))
    if d * d != vec.size:
        raise DimensionError(f"vector of length {vec.size} is not a vectorized {d}x{d} matrix")
    return vec.reshape(d, d).copy()


def trace_covector(d: int) -> np.ndarray:
    """Covector whose inner product with ``vectorize(rho)`` is ``Tr rho``."""
    if d < 1:
        raise ValidationError(f"dimension must be positive, got {d}")
    return np.eye(d, dtype=np.complex128).reshape(-1)


def operator_covector(op) -> np.ndarray:
    """Liouville covector ``o_(nu,mu) = <mu|op|nu>`` so that ``o @ vec(rho) = Tr(op rho)``."""
    op = as_operator(op, "operator")
    return op.T.reshape(-1).copy()


def check_hermitian(h, name: str = "hamiltonian", tol: float = HERMITIAN_TOL) -> np.ndarray:
    h = as_operator(h, name)
    if h.shape[0] != h.shape[1]:
        raise DimensionError(f"{name} must be square, got {h.shape}")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > tol * max(1.0, np.max(np.abs(h))):
        raise ValidationError(f"{name} is not Hermitian")
    return h


def superoperator(left, right) -> np.ndarray:
    """Matrix of ``rho -> left @ rho @ right`` in the row-major convention."""
    left = np.asarray(left, dtype=np.complex128)
    right = np.asarray(right, dtype=np.complex128)
    return np.kron(left, right.T)


def hamiltonian_liouvillian(h) -> np.ndarray:
    """``L = -i (H (x) 1 - 1 (x) H^T)``, the generator of ``-i[H, rho]``."""
    h = check_hermitian(h)
    eye = np.eye(h.shape[0], dtype=np.complex128)
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def lindblad_dissipator(c, rate: float = 1.0) -> np.ndarray:
    """Generator of ``rate * (c rho c^+ - {c^+ c, rho} / 2)``."""
    c = as_operator(c, "jump operator")
    if c.shape[0] != c.shape[1]:
        raise DimensionError("jump operator must be square")
    eye = np.eye(c.shape[0], dtype=np.complex128)
    cdc = c.conj().T @ c
    return rate * (superoperator(c, c.conj().T) - 0.5 * superoperator(cdc, eye) - 0.5 * superoperator(eye, cdc))


def split_order(sup: np.ndarray, d_sys: int, d_env: int) -> np.ndarray:
    """Reorder a joint superoperator from ``(nu xi, mu eta)`` to ``((nu mu), (xi eta))`` indexing."""
    n = d_sys * d_env
    if sup.shape != (n * n, n * n):
        raise DimensionError(f"expected a {(n * n, n * n)} superoperator, got {sup.shape}")
    t = sup.reshape(d_sys, d_env, d_sys, d_env, d_sys, d_env, d_sys, d_env)
    return t.transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(n * n, n * n)


def joint_liouvillian(h, d_sys: int, d_env: int) -> np.ndarray:
    """Liouvillian of a system (x) mode Hamiltonian in split ``(alpha, beta)`` order."""
    h = check_hermitian(h)
    if h.shape[0] != d_sys * d_env:
        raise DimensionError(f"hamiltonian has dimension {h.shape[0]}, expected {d_sys}*{d_env}")
    return split_order(hamiltonian_liouvillian(h), d_sys, d_env)


@lru_cache(maxsize=None)
def _fermion_parity() -> np.ndarray:
    # |0><0|_S (x) 1 + |1><1|_S (x) (-sigma^z); basis 0 = empty, 1 = occupied
    return np.diag([1.0, 1.0, 1.0, -1.0]).astype(np.complex128)


def fermion_parity_operator() -> np.ndarray:
    """Local parity dressing ``(-sigma^z_mode)^(n_S)`` on the 4-dim site (x) mode space."""
    return _fermion_parity().copy()


@dataclass(frozen=True, eq=False)
class ModeSpec:
    """One environment mode coupled to the system.

    Attributes:
        mode_dim: Hilbert-space dimension of the mode.
        joint_hamiltonian: Mode Hamiltonian including the system coupling, on
            the ``d_sys * mode_dim`` product space (system index slow).
        initial_state: Mode density matrix at ``t = 0``.
        fermionic: Whether the mode is a Jordan-Wigner spin standing in for a
            fermion; enables the parity dressing of its propagator.
        label: Free-form tag used in reports.
    """

    mode_dim: int
    joint_hamiltonian: np.ndarray
    initial_state: np.ndarray
    fermionic: bool = False
    label: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode_dim < 1:
            raise ValidationError("mode_dim must be positive")
        h = check_hermitian(self.joint_hamiltonian, "joint_hamiltonian")
        if h.shape[0] % self.mode_dim:
            raise DimensionError("joint_hamiltonian dimension is not a multiple of mode_dim")
        rho = as_operator(self.initial_state, "initial_state")
        if rho.shape != (self.mode_dim, self.mode_dim):
            raise DimensionError(f"initial_state must be {self.mode_dim}x{self.mode_dim}")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise ValidationError("initial_state is not Hermitian")
        if abs(np.trace(rho) - 1.0) > 1e-10:
            raise ValidationError("initial_state does not have unit trace")
        if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
            raise ValidationError("initial_state is not positive semidefinite")
        object.__setattr__(self, "joint_hamiltonian", h)
        object.__setattr__(self, "initial_state", rho)

    @property
    def d_sys(self) -> int:
        return self.joint_hamiltonian.shape[0] // self.mode_dim


def mode_propagator(mode: ModeSpec, d_sys: int, dt_fraction: float) -> np.ndarray:
    """Propagator ``exp(L_k * dt_fraction)`` of one mode in split order.

    Rows are indexed by ``(alpha_out, beta_out)`` and columns by
    ``(alpha_in, beta_in)``. Fermionic modes get the local parity dressing
    applied after the exponential factor, i.e. ``B = exp(L dt) [P (x) P]``.

    The exponential is taken on Hilbert space, ``U = exp(-i H dt)``, and lifted
    as ``U (x) conj(U)``; for a purely Hamiltonian generator this equals the
    exponential of the Liouvillian exactly.
    """
    if mode.joint_hamiltonian.shape[0] != d_sys * mode.mode_dim:
        raise DimensionError(
            f"mode Hamiltonian dimension {mode.joint_hamiltonian.shape[0]} != {d_sys}*{mode.mode_dim}"
        )
    u = matrix_exp(-1j * dt_fraction * mode.joint_hamiltonian)
    if mode.fermionic:
        if d_sys != 2 or mode.mode_dim != 2:
            raise UnsupportedConfigurationError("fermionic modes require d_sys == 2 and mode_dim == 2")
        u = u @ _fermion_parity()
    return split_order(np.kron(u, u.conj()), d_sys, mode.mode_dim)


HamiltonianLike = np.ndarray | Callable[[float], np.ndarray] | None


class SystemPropagatorSchedule:
    """Free system propagators ``M_l = exp(L_S dt)`` for each time step.

    A time-dependent Hamiltonian is sampled at the midpoint of the interval
    each propagator covers. Optional Lindblad terms enter ``L_S`` additively.

    Args:
        d_sys: System Hilbert-space dimension.
        dt: Time step.
        hamiltonian: Constant matrix, a callable ``t -> H(t)`` or ``None``
            for ``H_S = 0``.
        dissipators: Pairs ``(jump_operator, rate)``.
        t0: Time of the initial state.
    """

    def __init__(
        self,
        d_sys: int,
        dt: float,
        hamiltonian: HamiltonianLike = None,
        dissipators: Sequence[tuple[np.ndarray, float]] = (),
        t0: float = 0.0,
    ) -> None:
        if d_sys < 1:
            raise ValidationError("d_sys must be positive")
        if not dt > 0:
            raise ValidationError("dt must be positive")
        self.d_sys = d_sys
        self.dt = float(dt)
        self.t0 = float(t0)
        self._hamiltonian = hamiltonian
        d2 = d_sys * d_sys
        self._dissipator = np.zeros((d2, d2), dtype=np.complex128)
        for c, rate in dissipators:
            self._dissipator += lindblad_dissipator(c, rate)
        self._cache: dict[tuple[float, float], np.ndarray] = {}

    @property
    def time_dependent(self) -> bool:
        return callable(self._hamiltonian)

    def hamiltonian_at(self, t: float) -> np.ndarray:
        if self._hamiltonian is None:
            return np.zeros((self.d_sys, self.d_sys), dtype=np.complex128)
        h = self._hamiltonian(t) if callable(self._hamiltonian) else self._hamiltonian
        h = check_hermitian(h, "system hamiltonian")
        if h.shape != (self.d_sys, self.d_sys):
            raise DimensionError(f"system hamiltonian must be {self.d_sys}x{self.d_sys}")
        return h

    def liouvillian(self, t: float) -> np.ndarray:
        return hamiltonian_liouvillian(self.hamiltonian_at(t)) + self._dissipator

    def propagator(self, step: int, start: float = 0.0, duration: float = 1.0) -> np.ndarray:
        """Propagator over ``[t_{step-1} + start*dt, t_{step-1} + (start+duration)*dt]``."""
        t_mid = self.t0 + (step - 1 + start + 0.5 * duration) * self.dt
        key = (0.0, duration) if not self.time_dependent else (t_mid, duration)
        m = self._cache.get(key)
        if m is None:
            m = matrix_exp(self.liouvillian(t_mid) * (duration * self.dt))
            if len(self._cache) < 4096:
                self._cache[key] = m
        return m

    def step(self, step: int) -> np.ndarray:
        """Full-step propagator ``M_step`` (``step`` counts from 1)."""
        return self.propagator(step)
