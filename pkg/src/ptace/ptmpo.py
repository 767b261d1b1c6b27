"""Process-tensor MPO container and the ACE construction pipeline.

Tensor ``Q_l`` (``l = 1..n``) has shape ``(chi_l, d^2, d^2, chi_{l-1})`` and is
indexed ``[d_l, alpha_l, alpha'_l, d_{l-1}]``; the boundary bonds ``chi_0``
and ``chi_n`` are 1. Bond ``l`` sits between ``Q_l`` and ``Q_{l+1}``.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .closures import ClosureSet, ObservableClosure, ObservableSpec
from .errors import DegenerateCompressionError, DimensionError, PTMPOError, ValidationError
from .liouville import ModeSpec, mode_propagator, trace_covector, vectorize
from .numerics import projected_svd

log = logging.getLogger(__name__)

# Relative floor applied on top of eps inside sweeps; removes singular values
# that are zero up to rounding, whose reciprocals would poison the closures.
RANK_FLOOR = 1e-13


@dataclass(eq=False)
class PTMPO:
    """A process tensor in MPO form together with its closures."""

    n_steps: int
    d_sys: int
    dt: float
    tensors: list[np.ndarray]
    closures: ClosureSet
    n_modes: int = 0
    peak_bond_dims: list[int] = field(default_factory=list)

    @property
    def bond_dims(self) -> list[int]:
        return [self.tensors[0].shape[3]] + [q.shape[0] for q in self.tensors]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)

    def observable_names(self) -> list[str]:
        return self.closures.names()

    def validate(self) -> None:
        d2 = self.d_sys**2
        if len(self.tensors) != self.n_steps:
            raise PTMPOError(f"expected {self.n_steps} tensors, got {len(self.tensors)}")
        for l, q in enumerate(self.tensors, start=1):
            if q.ndim != 4 or q.shape[1:3] != (d2, d2):
                raise PTMPOError(f"tensor {l} has shape {q.shape}")
            if l > 1 and q.shape[3] != self.tensors[l - 2].shape[0]:
                raise PTMPOError(f"bond mismatch between tensors {l - 1} and {l}")
            if not np.all(np.isfinite(q)):
                raise PTMPOError(f"tensor {l} contains non-finite entries")
        dims = self.bond_dims
        if dims[0] != 1 or dims[-1] != 1:
            raise PTMPOError(f"boundary bonds must have dimension 1, got {dims[0]} and {dims[-1]}")
        self.closures.check(dims)

    def copy(self) -> PTMPO:
        return PTMPO(
            self.n_steps,
            self.d_sys,
            self.dt,
            [q.copy() for q in self.tensors],
            self.closures.copy(),
            self.n_modes,
            list(self.peak_bond_dims),
        )


def trivial_pt(n_steps: int, d_sys: int, dt: float, observables: Sequence[ObservableSpec] = ()) -> PTMPO:
    """PT-MPO of an empty environment: ``Q = delta_{alpha,alpha'}`` with unit bonds."""
    if n_steps < 1:
        raise ValidationError("n_steps must be at least 1")
    if d_sys < 1 or not dt > 0:
        raise ValidationError("d_sys must be positive and dt > 0")
    d2 = d_sys * d_sys
    eye = np.eye(d2, dtype=np.complex128).reshape(1, d2, d2, 1)
    return PTMPO(n_steps, d_sys, float(dt), [eye.copy() for _ in range(n_steps)], ClosureSet(n_steps, observables))


# -- single-site kernels --------------------------------------------------


def _combine_site(q: np.ndarray, b4: np.ndarray, right_map: np.ndarray) -> np.ndarray:
    """``B Q B`` at one site with the new right bond mapped by ``right_map``.

    ``b4`` is the half-step mode propagator indexed ``[a_out, b_out, a_in, b_in]``
    and ``right_map`` has shape ``(chi_{l-1} * D, r)``. Returns a tensor of
    shape ``(chi_l * D, d2, d2, r)``.
    """
    chi_l, d2, _, chi_p = q.shape
    big_d = b4.shape[1]
    r = right_map.shape[1]
    # right factor acts first: (a', m) <- (A', bp); bp is contracted with the right map
    r_map = right_map.reshape(chi_p, big_d, r).transpose(1, 0, 2).reshape(big_d, chi_p * r)
    z = b4.reshape(d2 * big_d * d2, big_d) @ r_map  # [x, m, A, p, j]
    z = z.reshape(d2, big_d * d2, chi_p, r).transpose(0, 2, 1, 3).reshape(d2 * chi_p, big_d * d2 * r)
    z = q.reshape(chi_l * d2, d2 * chi_p) @ z  # [d, a, m, A, j]
    z = z.reshape(chi_l, d2 * big_d, d2 * r)
    out = np.matmul(b4.reshape(d2 * big_d, d2 * big_d), z)  # [d, E, b, A, j]
    out = out.reshape(chi_l, d2, big_d, d2, r).transpose(0, 2, 1, 3, 4)
    return out.reshape(chi_l * big_d, d2, d2, r)


def _left_mult(m: np.ndarray, a4: np.ndarray) -> np.ndarray:
    """Contract ``m`` into the left bond of a site tensor."""
    return (m @ a4.reshape(a4.shape[0], -1)).reshape(m.shape[0], *a4.shape[1:])


def _right_mult(a4: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Contract ``m`` into the right bond of a site tensor."""
    return (a4.reshape(-1, a4.shape[3]) @ m).reshape(*a4.shape[:3], m.shape[1])


def _forward_split(a4: np.ndarray, eps: float, step: int) -> tuple[np.ndarray, np.ndarray]:
    """SVD ``(d_l) x ((alpha,alpha'), d_{l-1})``; returns new ``Q_l = V^+`` and carry ``U sigma``."""
    chi_l, d2, _, chi_p = a4.shape
    try:
        svd = projected_svd(a4.reshape(chi_l, d2 * d2 * chi_p), max(eps, RANK_FLOOR), check=False)
    except DegenerateCompressionError as exc:
        raise DegenerateCompressionError("forward sweep hit an all-zero tensor", step=step) from exc
    return svd.v_dag.reshape(svd.rank, d2, d2, chi_p), svd.u * svd.sigma


def _backward_split(a4: np.ndarray, eps: float, step: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD ``(d_l, (alpha,alpha')) x d_{l-1}``; returns ``Q_l = U``, carry ``sigma V^+`` and ``T^{-1} = V sigma^{-1}``."""
    chi_l, d2, _, chi_p = a4.shape
    try:
        svd = projected_svd(a4.reshape(chi_l * d2 * d2, chi_p), max(eps, RANK_FLOOR), check=False)
    except DegenerateCompressionError as exc:
        raise DegenerateCompressionError("backward sweep hit an all-zero tensor", step=step) from exc
    carry = svd.sigma[:, None] * svd.v_dag
    t_inv = svd.v_dag.conj().T / svd.sigma[None, :]
    return svd.u.reshape(chi_l, d2, d2, svd.rank), carry, t_inv


def _pseudo_trace(mode_dim: int) -> np.ndarray:
    # Moore-Penrose pseudoinverse of the trace covector: I / mode_dim
    return trace_covector(mode_dim) / mode_dim


# -- public operations -----------------------------------------------------


def _check_mode(pt: PTMPO, mode: ModeSpec) -> None:
    if mode.joint_hamiltonian.shape[0] != pt.d_sys * mode.mode_dim:
        raise DimensionError(
            f"mode Hamiltonian has dimension {mode.joint_hamiltonian.shape[0]}, "
            f"expected d_sys*mode_dim = {pt.d_sys}*{mode.mode_dim}"
        )


def _half_step_tensor(pt: PTMPO, mode: ModeSpec) -> np.ndarray:
    d2 = pt.d_sys**2
    big_d = mode.mode_dim**2
    return mode_propagator(mode, pt.d_sys, 0.5 * pt.dt).reshape(d2, big_d, d2, big_d)


def combine_mode(pt: PTMPO, mode: ModeSpec) -> PTMPO:
    """Absorb one more mode into ``pt`` without compression.

    Interior sites become ``B(dt/2) Q B(dt/2)`` with bonds ``(d, beta)``; the
    incoming mode bond of site 1 is closed with the mode's initial state and
    the outgoing bond of site ``n`` with the mode trace.
    """
    _check_mode(pt, mode)
    out = pt.copy()
    b4 = _half_step_tensor(pt, mode)
    big_d = mode.mode_dim**2
    rho_e = vectorize(mode.initial_state)
    ident = trace_covector(mode.mode_dim)
    k = pt.n_modes
    n = pt.n_steps
    for l in range(1, n + 1):
        q = pt.tensors[l - 1]
        chi_p = q.shape[3]
        if l == 1:
            right = np.kron(np.eye(chi_p), rho_e[:, None])
        else:
            right = np.eye(chi_p * big_d)
        site = _combine_site(q, b4, right)
        if l == n:
            chi_l = q.shape[0]
            site = np.einsum("dbEAj,b->dEAj", site.reshape(chi_l, big_d, *site.shape[1:]), ident)
        out.tensors[l - 1] = site
    for l in range(n + 1):
        out.closures.expand_bond(l, k, mode)
    out.closures.close_bond(0, rho_e)
    out.closures.close_bond(n, _pseudo_trace(mode.mode_dim))
    out.n_modes = k + 1
    out.validate()
    return out


def sweep_forward(pt: PTMPO, eps: float) -> PTMPO:
    """Truncating forward sweep ``l = 1..n-1``; closures pick up ``U sigma``."""
    _check_eps(eps)
    out = pt.copy()
    carry = None
    for l in range(1, pt.n_steps):
        a4 = out.tensors[l - 1]
        if carry is not None:
            a4 = _right_mult(a4, carry)
        out.tensors[l - 1], carry = _forward_split(a4, eps, l)
        out.closures.transform_bond(l, carry)
    if carry is not None:
        out.tensors[-1] = _right_mult(out.tensors[-1], carry)
    out.validate()
    return out


def sweep_backward(pt: PTMPO, eps: float) -> PTMPO:
    """Truncating backward sweep ``l = n..2``; closures pick up ``V sigma^{-1}``."""
    _check_eps(eps)
    out = pt.copy()
    carry = None
    for l in range(pt.n_steps, 1, -1):
        a4 = out.tensors[l - 1]
        if carry is not None:
            a4 = _left_mult(carry, a4)
        out.tensors[l - 1], carry, t_inv = _backward_split(a4, eps, l)
        out.closures.transform_bond(l - 1, t_inv)
    if carry is not None:
        out.tensors[0] = _left_mult(carry, out.tensors[0])
    out.validate()
    return out


def _check_eps(eps: float) -> None:
    if not 0.0 <= eps < 1.0:
        raise ValidationError(f"compression threshold must lie in [0, 1), got {eps}")


def _combine_and_sweep_forward(pt: PTMPO, mode: ModeSpec, eps: float) -> int:
    """In-place fused ``combine_mode`` + ``sweep_forward``.

    Each site is combined with its right bond already compressed, so the
    uncompressed ``chi*D x chi*D`` tensors are never materialized. Returns the
    largest uncompressed bond dimension encountered.
    """
    b4 = _half_step_tensor(pt, mode)
    big_d = mode.mode_dim**2
    rho_e = vectorize(mode.initial_state)
    ident = trace_covector(mode.mode_dim)
    k = pt.n_modes
    n = pt.n_steps
    cl = pt.closures
    cl.expand_bond(0, k, mode)
    cl.close_bond(0, rho_e)
    right = np.kron(np.eye(pt.tensors[0].shape[3]), rho_e[:, None])
    peak = 1
    for l in range(1, n + 1):
        q = pt.tensors[l - 1]
        site = _combine_site(q, b4, right)
        peak = max(peak, site.shape[0])
        cl.expand_bond(l, k, mode)
        if l == n:
            chi_l = q.shape[0]
            pt.tensors[l - 1] = np.einsum("dbEAj,b->dEAj", site.reshape(chi_l, big_d, *site.shape[1:]), ident)
            cl.close_bond(n, _pseudo_trace(mode.mode_dim))
        else:
            pt.tensors[l - 1], right = _forward_split(site, eps, l)
            cl.transform_bond(l, right)
    pt.n_modes = k + 1
    return peak


def _sweep_backward_inplace(pt: PTMPO, eps: float) -> None:
    carry = None
    for l in range(pt.n_steps, 1, -1):
        a4 = pt.tensors[l - 1]
        if carry is not None:
            a4 = _left_mult(carry, a4)
        pt.tensors[l - 1], carry, t_inv = _backward_split(a4, eps, l)
        pt.closures.transform_bond(l - 1, t_inv)
    if carry is not None:
        pt.tensors[0] = _left_mult(carry, pt.tensors[0])


def balance_norms(pt: PTMPO) -> PTMPO:
    """Spread the overall norm evenly over the tensors (a diagonal gauge change).

    Sweeps pile the norm of the whole chain onto one end; rescaling ``Q_l`` by
    ``c_l`` with ``prod c_l = 1`` and the closures at bond ``l`` by
    ``1 / prod_{m<=l} c_m`` leaves every contraction unchanged.
    """
    norms = np.array([np.linalg.norm(q) for q in pt.tensors])
    if np.any(norms == 0):
        return pt
    log_norms = np.log(norms)
    target = log_norms.mean()
    factors = target - log_norms
    cumulative = 0.0
    for l, f in enumerate(factors, start=1):
        pt.tensors[l - 1] = pt.tensors[l - 1] * np.exp(f)
        cumulative += f
        pt.closures.scale_bond(l, np.exp(-cumulative))
    return pt


def build_ace(
    modes: Sequence[ModeSpec],
    n_steps: int,
    dt: float,
    eps: float,
    observables: Sequence[ObservableSpec] = (),
    *,
    d_sys: int | None = None,
    eps_backward: float | None = None,
    on_mode: Callable[[int, PTMPO], None] | None = None,
) -> PTMPO:
    """Build a compressed PT-MPO mode by mode.

    Starting from the trivial PT-MPO, every mode in list order is combined
    with the current PT-MPO through a symmetric Trotter step, then the chain
    is compressed with a forward and a backward truncating sweep. Closures for
    the trace and for all ``observables`` are updated alongside.

    Args:
        modes: Environment modes, all sharing the system dimension. Fermionic
            modes must appear in Jordan-Wigner order.
        n_steps: Number of time steps.
        dt: Time step.
        eps: Relative SVD threshold for the forward sweeps (and the backward
            sweeps unless ``eps_backward`` is given).
        observables: Observables whose closures are tracked.
        d_sys: System dimension; inferred from the first mode when omitted.
        eps_backward: Separate threshold for backward sweeps.
        on_mode: Called as ``on_mode(k, pt)`` after mode ``k`` is compressed,
            for progress reporting; an exception raised here aborts the build.

    Returns:
        The compressed PT-MPO; ``peak_bond_dims[k]`` is its maximal bond
        dimension right after mode ``k`` was incorporated.
    """
    _check_eps(eps)
    eps_bw = eps if eps_backward is None else eps_backward
    _check_eps(eps_bw)
    if d_sys is None:
        if not modes:
            raise ValidationError("d_sys is required when no modes are given")
        d_sys = modes[0].d_sys
    pt = trivial_pt(n_steps, d_sys, dt, observables)
    for spec in observables:
        if spec.system_part.shape != (d_sys, d_sys):
            raise DimensionError(f"system part of {spec.name!r} must be {d_sys}x{d_sys}")
    for k, mode in enumerate(modes):
        _check_mode(pt, mode)
        try:
            uncompressed = _combine_and_sweep_forward(pt, mode, eps)
            _sweep_backward_inplace(pt, eps_bw)
        except DegenerateCompressionError as exc:
            raise DegenerateCompressionError(str(exc), step=exc.step, mode=k) from exc
        pt.peak_bond_dims.append(pt.max_bond)
        log.debug("mode %d: uncompressed bond %d -> max bond %d", k, uncompressed, pt.max_bond)
        if on_mode is not None:
            on_mode(k, pt)
    balance_norms(pt)
    pt.validate()
    return pt


# -- serialization ---------------------------------------------------------

MAGIC = b"PTM1"
_HEADER = struct.Struct("<4sIId")
_U32 = struct.Struct("<I")


def _write_complex(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())


def _read_complex(buf: memoryview, pos: int, count: int) -> tuple[np.ndarray, int]:
    nbytes = 16 * count
    if pos + nbytes > len(buf):
        raise ValidationError("truncated PT-MPO file")
    arr = np.frombuffer(buf[pos : pos + nbytes], dtype="<c16").astype(np.complex128)
    return arr, pos + nbytes


def _read_u32(buf: memoryview, pos: int) -> tuple[int, int]:
    if pos + 4 > len(buf):
        raise ValidationError("truncated PT-MPO file")
    return _U32.unpack_from(buf, pos)[0], pos + 4


def save_ptmpo(pt: PTMPO, path: str | Path) -> None:
    """Write ``pt`` to the little-endian ``PTM1`` container."""
    pt.validate()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, pt.n_steps, pt.d_sys, pt.dt))
        fh.write(_U32.pack(pt.n_modes))
        for q in pt.tensors:
            fh.write(struct.pack("<4I", *q.shape))
            _write_complex(fh, q)
        for v in pt.closures.trace:
            fh.write(_U32.pack(v.shape[0]))
            _write_complex(fh, v)
        fh.write(_U32.pack(len(pt.closures.observables)))
        for name, oc in pt.closures.observables.items():
            raw = name.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
            fh.write(bytes([1 if oc.spec.fermionic_string else 0]))
            _write_complex(fh, oc.spec.system_part)
            for v in oc.vectors:
                fh.write(_U32.pack(v.shape[0]))
                _write_complex(fh, v)
        fh.write(_U32.pack(len(pt.peak_bond_dims)))
        for p in pt.peak_bond_dims:
            fh.write(_U32.pack(p))


def load_ptmpo(path: str | Path) -> PTMPO:
    """Read a ``PTM1`` container and validate every structural invariant."""
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < _HEADER.size:
        raise ValidationError("file too short for a PT-MPO header")
    magic, n_steps, d_sys, dt = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValidationError(f"bad magic bytes {magic!r}")
    if n_steps < 1 or d_sys < 1 or not dt > 0:
        raise ValidationError("invalid header values")
    pos = _HEADER.size
    n_modes, pos = _read_u32(buf, pos)
    tensors = []
    for _ in range(n_steps):
        if pos + 16 > len(buf):
            raise ValidationError("truncated PT-MPO file")
        shape = struct.unpack_from("<4I", buf, pos)
        pos += 16
        data, pos = _read_complex(buf, pos, int(np.prod(shape)))
        tensors.append(data.reshape(shape))
    closures = ClosureSet(n_steps)
    for l in range(n_steps + 1):
        length, pos = _read_u32(buf, pos)
        closures.trace[l], pos = _read_complex(buf, pos, length)
    n_obs, pos = _read_u32(buf, pos)
    for _ in range(n_obs):
        length, pos = _read_u32(buf, pos)
        name = bytes(buf[pos : pos + length]).decode("utf-8")
        pos += length
        fermionic = bool(buf[pos])
        pos += 1
        sys_part, pos = _read_complex(buf, pos, d_sys * d_sys)
        spec = ObservableSpec(name, sys_part.reshape(d_sys, d_sys), fermionic_string=fermionic)
        vectors = []
        for _ in range(n_steps + 1):
            length, pos = _read_u32(buf, pos)
            v, pos = _read_complex(buf, pos, length)
            vectors.append(v)
        closures.observables[name] = ObservableClosure(spec, vectors)
    n_peaks, pos = _read_u32(buf, pos)
    peaks = []
    for _ in range(n_peaks):
        p, pos = _read_u32(buf, pos)
        peaks.append(p)
    if pos != len(buf):
        raise ValidationError("trailing bytes after PT-MPO payload")
    pt = PTMPO(n_steps, d_sys, dt, tensors, closures, n_modes, peaks)
    pt.validate()
    return pt
