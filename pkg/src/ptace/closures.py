"""Trace and observable closures on the inner bonds of a PT-MPO.

A closure is a covector on inner bond ``l`` (between ``Q_l`` and
``Q_{l+1}``). Contracting the trace closure ``q_l`` with the extended state
``rho^alpha_{d_l}`` gives the reduced system density matrix; contracting an
observable closure together with its system part gives
``<sum_k A (x) O^(k)>``. Closures are expanded whenever a mode enters a bond
and transformed like the pseudoinverse ``T^{-1}`` whenever a bond is
compressed, so they never require the transformation matrices themselves.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PTMPOError, UnsupportedConfigurationError, ValidationError
from .liouville import ModeSpec, operator_covector, trace_covector
from .numerics import as_operator

_PARITY = np.diag([1.0, -1.0]).astype(np.complex128)


@dataclass(eq=False)
class ObservableSpec:
    """Observable ``sum_k A (x) O^(k)``.

    Attributes:
        name: Channel name used in outputs.
        system_part: ``A`` on the system Hilbert space.
        env_parts: One operator per environment mode, in incorporation order;
            ``None`` entries stand for the zero operator.
        fermionic_string: Dress earlier contributions with the parity of every
            later-incorporated mode (Jordan-Wigner string), as needed for
            currents into fermionic leads.
    """

    name: str
    system_part: np.ndarray
    env_parts: Sequence[np.ndarray | None] = field(default_factory=list)
    fermionic_string: bool = False

    def __post_init__(self) -> None:
        self.system_part = as_operator(self.system_part, f"system_part of {self.name!r}")
        if self.system_part.shape[0] != self.system_part.shape[1]:
            raise DimensionError(f"system_part of {self.name!r} must be square")

    def env_covector(self, k: int, mode: ModeSpec) -> np.ndarray:
        """Liouville covector of ``O^(k)``; zero when no part is given."""
        op = self.env_parts[k] if k < len(self.env_parts) else None
        if op is None:
            return np.zeros(mode.mode_dim**2, dtype=np.complex128)
        op = as_operator(op, f"env part {k} of {self.name!r}")
        if op.shape != (mode.mode_dim, mode.mode_dim):
            raise DimensionError(
                f"env part {k} of {self.name!r} has shape {op.shape}, mode dimension is {mode.mode_dim}"
            )
        return operator_covector(op)


@dataclass(eq=False)
class ObservableClosure:
    spec: ObservableSpec
    vectors: list[np.ndarray]

    @property
    def system_covector(self) -> np.ndarray:
        return operator_covector(self.spec.system_part)


class ClosureSet:
    """Trace closure plus named observable closures for every bond ``0..n``.

    Bond 0 carries the initial environment state and bond ``n`` the final
    trace; both keep dimension 1.
    """

    def __init__(self, n_steps: int, observables: Sequence[ObservableSpec] = ()) -> None:
        self.n_steps = n_steps
        one = np.ones(1, dtype=np.complex128)
        self.trace: list[np.ndarray] = [one.copy() for _ in range(n_steps + 1)]
        self.observables: dict[str, ObservableClosure] = {}
        for spec in observables:
            if spec.name in self.observables or spec.name == "trace":
                raise ValidationError(f"duplicate or reserved observable name {spec.name!r}")
            zeros = [np.zeros(1, dtype=np.complex128) for _ in range(n_steps + 1)]
            self.observables[spec.name] = ObservableClosure(spec, zeros)

    def names(self) -> list[str]:
        return list(self.observables)

    def bond_dim(self, l: int) -> int:
        return self.trace[l].shape[0]

    def copy(self) -> ClosureSet:
        new = ClosureSet.__new__(ClosureSet)
        new.n_steps = self.n_steps
        new.trace = [v.copy() for v in self.trace]
        new.observables = {
            name: ObservableClosure(oc.spec, [v.copy() for v in oc.vectors]) for name, oc in self.observables.items()
        }
        return new

    def _all_vectors(self, l: int):
        yield self.trace, l
        for oc in self.observables.values():
            yield oc.vectors, l

    def check(self, bond_dims: Sequence[int]) -> None:
        for l, chi in enumerate(bond_dims):
            for vecs, _ in self._all_vectors(l):
                if vecs[l].shape != (chi,):
                    raise PTMPOError(f"closure at bond {l} has length {vecs[l].shape[0]}, bond dimension is {chi}")

    # -- updates -----------------------------------------------------------

    def expand_bond(self, l: int, k: int, mode: ModeSpec) -> None:
        """Expand bond ``l`` from ``d`` to ``(d, beta)`` with the Liouville space of mode ``k``."""
        q = self.trace[l]
        ident = trace_covector(mode.mode_dim)
        for oc in self.observables.values():
            o_k = oc.spec.env_covector(k, mode)
            if oc.spec.fermionic_string:
                if not mode.fermionic:
                    raise UnsupportedConfigurationError(
                        f"observable {oc.spec.name!r} carries a parity string but mode {k} is not fermionic"
                    )
                carry = operator_covector(_PARITY)
            else:
                carry = ident
            oc.vectors[l] = np.kron(oc.vectors[l], carry) + np.kron(q, o_k)
        self.trace[l] = np.kron(q, ident)

    def close_bond(self, l: int, vec: np.ndarray) -> None:
        """Contract the freshly expanded ``beta`` index of bond ``l`` with ``vec``."""
        vec = np.asarray(vec, dtype=np.complex128)
        dim = vec.shape[0]
        for vecs, _ in self._all_vectors(l):
            if vecs[l].shape[0] % dim:
                raise PTMPOError(f"bond {l} of length {vecs[l].shape[0]} cannot be closed with a {dim}-vector")
            vecs[l] = vecs[l].reshape(-1, dim) @ vec

    def transform_bond(self, l: int, t_inv: np.ndarray) -> None:
        """Right-multiply every closure at bond ``l`` by ``t_inv``."""
        t_inv = np.asarray(t_inv, dtype=np.complex128)
        for vecs, _ in self._all_vectors(l):
            if vecs[l].shape[0] != t_inv.shape[0]:
                raise DimensionError(
                    f"transform with {t_inv.shape[0]} rows applied to closure of length {vecs[l].shape[0]} at bond {l}"
                )
            vecs[l] = vecs[l] @ t_inv

    def scale_bond(self, l: int, factor: complex) -> None:
        for vecs, _ in self._all_vectors(l):
            vecs[l] = vecs[l] * factor


def initial_closures(n_steps: int, observables: Sequence[ObservableSpec] = ()) -> ClosureSet:
    return ClosureSet(n_steps, observables)


def expand_with_mode(closures: ClosureSet, k: int, mode: ModeSpec, bonds: Sequence[int] | None = None) -> ClosureSet:
    """Expand every closure at ``bonds`` (default: all) with mode ``k``.

    ``q~_(d,beta) = q_d I_beta`` and ``o~_(d,beta) = o_d I_beta + q_d o^(k)_beta``.
    Observables flagged with a parity string use the fermionic variant.
    """
    for l in range(closures.n_steps + 1) if bonds is None else bonds:
        closures.expand_bond(l, k, mode)
    return closures


def expand_with_mode_fermionic(
    closures: ClosureSet, k: int, mode: ModeSpec, bonds: Sequence[int] | None = None
) -> ClosureSet:
    """Parity-string expansion ``o~ = o <eta|-sigma^z|xi> + q <eta|O^(k)|xi>``.

    Only valid for fermionic modes; string-free observables in the same set
    are expanded with the ordinary rule.
    """
    if not mode.fermionic:
        raise UnsupportedConfigurationError(f"mode {k} is not fermionic")
    return expand_with_mode(closures, k, mode, bonds)


def apply_bond_transform(closures: ClosureSet, l: int, t_inv: np.ndarray) -> ClosureSet:
    closures.transform_bond(l, t_inv)
    return closures


@dataclass(frozen=True)
class ExtractionKernel:
    """Per-bond kernels ``o^alpha * o_d`` of one observable, ready for contraction."""

    name: str
    system_covector: np.ndarray
    env_vectors: tuple[np.ndarray, ...]

    def value(self, l: int, rho_ext: np.ndarray) -> complex:
        """``sum_{alpha,d} o^alpha o_{d} rho^alpha_d`` at bond ``l``."""
        return complex(self.system_covector @ rho_ext @ self.env_vectors[l])


def finalize(closures: ClosureSet, name: str, d_sys: int | None = None) -> ExtractionKernel:
    """Extraction kernel for observable ``name``.

    The reserved name ``"trace"`` gives the normalization kernel (identity
    system part with the trace closures) and needs ``d_sys``.
    """
    if name == "trace":
        if d_sys is None:
            raise ValidationError("the trace kernel needs d_sys")
        return trace_kernel(closures, d_sys)
    try:
        oc = closures.observables[name]
    except KeyError:
        raise ValidationError(f"unknown observable {name!r}; declared: {closures.names()}") from None
    return ExtractionKernel(name, oc.system_covector, tuple(oc.vectors))


def trace_kernel(closures: ClosureSet, d_sys: int) -> ExtractionKernel:
    return ExtractionKernel("trace", trace_covector(d_sys), tuple(closures.trace))
