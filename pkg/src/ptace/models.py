"""Environment and drive builders.

Frequencies, couplings and rates are angular and expressed in inverse units
of whatever time unit the caller works in (``hbar = 1``). Conversions from
kelvin and meV are provided for the picosecond unit.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .liouville import ModeSpec, SystemPropagatorSchedule

# CODATA values
HBAR_MEV_PS = 0.6582119569
KB_MEV_PER_K = 0.08617333262

SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)  # |1><0|
SIGMA_MINUS = SIGMA_PLUS.T.copy()
SPIN_X = np.array([[0, 1], [1, 0]], dtype=np.complex128) / 2
SPIN_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128) / 2
SPIN_Z = np.diag([0.5, -0.5]).astype(np.complex128)

# two-level emitter: index 0 = |g>, 1 = |e>
GROUND = np.diag([1.0, 0.0]).astype(np.complex128)
EXCITED = np.diag([0.0, 1.0]).astype(np.complex128)
RAISE = SIGMA_PLUS  # |e><g|
LOWER = SIGMA_MINUS  # |g><e|

KINDS = ("flat", "bump", "lorentzian", "phonon")


def kelvin_to_rate(temperature_k: float, time_unit: str = "ps") -> float:
    """``k_B T / hbar`` in inverse time units."""
    return temperature_k * KB_MEV_PER_K / HBAR_MEV_PS * _ps_per(time_unit)


def mev_to_rate(energy_mev: float, time_unit: str = "ps") -> float:
    """``E / hbar`` in inverse time units."""
    return energy_mev / HBAR_MEV_PS * _ps_per(time_unit)


def _ps_per(time_unit: str) -> float:
    scale = {"ps": 1.0, "fs": 1e-3, "ns": 1e3}
    try:
        return scale[time_unit]
    except KeyError:
        raise ValidationError(f"no physical conversion for time unit {time_unit!r}") from None


@dataclass(frozen=True)
class SpectralDensity:
    """Spectral density ``J(omega)`` with its discretization window.

    ``flat``: ``kappa / 2pi``; ``bump``: ``kappa/2pi * exp(1 - 1/(1 - (2w/w_BW)^2))``
    inside ``|w| < w_BW/2``; ``lorentzian``: ``kappa^2/pi * gamma/(w^2 + gamma^2)``;
    ``phonon``: ``w^3 (c_e exp(-w^2/w_e^2) - c_h exp(-w^2/w_h^2))^2``.

    The window defaults to ``[-w_BW/2, w_BW/2]`` and to ``[0, w_BW]`` for
    phonons.
    """

    kind: str
    n_modes: int
    omega_bw: float
    kappa: float = 1.0
    gamma: float = 1.0
    c_e: float = 0.0
    c_h: float = 0.0
    omega_e: float = 1.0
    omega_h: float = 1.0
    window: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown spectral density kind {self.kind!r}; expected one of {KINDS}")
        if self.n_modes < 1:
            raise ValidationError("n_modes must be at least 1")
        if not self.omega_bw > 0:
            raise ValidationError("omega_bw must be positive")
        lo, hi = self.bounds
        if not hi > lo:
            raise ValidationError(f"empty frequency window {self.bounds}")

    @property
    def bounds(self) -> tuple[float, float]:
        if self.window is not None:
            return float(self.window[0]), float(self.window[1])
        if self.kind == "phonon":
            return 0.0, self.omega_bw
        return -self.omega_bw / 2, self.omega_bw / 2

    def __call__(self, omega) -> np.ndarray:
        w = np.asarray(omega, dtype=float)
        if self.kind == "flat":
            return np.full_like(w, self.kappa / (2 * np.pi))
        if self.kind == "bump":
            x = 2 * w / self.omega_bw
            out = np.zeros_like(w)
            inside = np.abs(x) < 1
            out[inside] = self.kappa / (2 * np.pi) * np.exp(1 - 1 / (1 - x[inside] ** 2))
            return out
        if self.kind == "lorentzian":
            return self.kappa**2 / np.pi * self.gamma / (w**2 + self.gamma**2)
        envelope = self.c_e * np.exp(-(w**2) / self.omega_e**2) - self.c_h * np.exp(-(w**2) / self.omega_h**2)
        return w**3 * envelope**2


def discretize(j: SpectralDensity) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint discretization ``g_k = sqrt(J(w_k) * width / N)``, ascending in ``w``."""
    lo, hi = j.bounds
    width = hi - lo
    step = width / j.n_modes
    omegas = lo + (np.arange(j.n_modes) + 0.5) * step
    values = j(omegas)
    if np.any(values < 0):
        raise ValidationError("spectral density is negative on the discretization grid")
    return omegas, np.sqrt(values * step)


# -- central spin ----------------------------------------------------------


def heisenberg_coupling(coupling: float) -> np.ndarray:
    """``J S . s`` on spin (x) spin."""
    return coupling * sum(np.kron(s, s) for s in (SPIN_X, SPIN_Y, SPIN_Z))


def random_pure_state(rng: np.random.Generator) -> np.ndarray:
    """Haar-random pure spin-1/2 state."""
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def central_spin_modes(n_spins: int, coupling: float, seed: int | None = None) -> list[ModeSpec]:
    """Bath spins with Heisenberg coupling ``J S . s^(k)`` and random initial orientations."""
    if n_spins < 0:
        raise ValidationError("n_spins must be non-negative")
    rng = np.random.default_rng(seed)
    h = heisenberg_coupling(coupling)
    return [
        ModeSpec(2, h, random_pure_state(rng), label=f"spin{k}", params={"coupling": coupling})
        for k in range(n_spins)
    ]


# -- fermionic leads -------------------------------------------------------


def lead_mode_hamiltonian(omega: float, g: float) -> np.ndarray:
    """``w c^+c + g (c^+ c_S + c_S^+ c)`` in the spin representation (system slow)."""
    n_mode = SIGMA_PLUS @ SIGMA_MINUS
    return (
        omega * np.kron(np.eye(2), n_mode)
        + g * np.kron(SIGMA_MINUS, SIGMA_PLUS)
        + g * np.kron(SIGMA_PLUS, SIGMA_MINUS)
    )


def fermionic_lead_modes(j: SpectralDensity, filled: bool) -> list[ModeSpec]:
    """Jordan-Wigner spin modes of a lead, fully filled or fully empty."""
    omegas, gs = discretize(j)
    occ = 1.0 if filled else 0.0
    rho = np.diag([1.0 - occ, occ]).astype(np.complex128)
    return [
        ModeSpec(
            2,
            lead_mode_hamiltonian(w, g),
            rho,
            fermionic=True,
            label=f"lead{k}",
            params={"omega": float(w), "g": float(g)},
        )
        for k, (w, g) in enumerate(zip(omegas, gs))
    ]


def lead_current_parts(gs: Sequence[float]) -> list[np.ndarray]:
    """Environment parts ``g_k sigma^+_k`` of the lead-to-system current observable."""
    return [g * SIGMA_PLUS for g in gs]


# -- bosonic modes ---------------------------------------------------------


def ladder(n_max: int) -> np.ndarray:
    """Annihilation operator on ``n = 0..n_max``."""
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(np.complex128)


def thermal_weights(omega: float, temperature: float, n_max: int) -> tuple[np.ndarray, float]:
    """Normalized Boltzmann weights on ``0..n_max`` and the discarded tail weight.

    ``temperature`` is ``k_B T / hbar``. The tail weight is the probability
    above ``n_max`` in the untruncated thermal state.
    """
    if temperature < 0:
        raise ValidationError("temperature must be non-negative")
    p = np.zeros(n_max + 1)
    if temperature == 0:
        p[0] = 1.0
        return p, 0.0
    if omega <= 0:
        raise ValidationError(f"thermal state of a mode with frequency {omega} is not normalizable")
    x = omega / temperature
    p = np.exp(-x * np.arange(n_max + 1))
    tail = math.exp(-x * (n_max + 1))
    return p / p.sum(), tail


def auto_n_max(omega: float, temperature: float, tail_tol: float = 1e-3, cap: int = 40) -> int:
    """Smallest truncation whose thermal tail is below ``tail_tol`` (at least 1)."""
    if temperature == 0:
        return 1
    if omega <= 0:
        raise ValidationError("auto truncation needs positive mode frequencies")
    n = math.ceil(temperature / omega * math.log(1 / tail_tol)) - 1
    return int(min(max(n, 1), cap))


def boson_modes(
    j: SpectralDensity,
    n_max: int | str = 2,
    temperature: float = 0.0,
    coupling: str = "rotating-wave",
    *,
    tail_tol: float = 1e-3,
    n_max_cap: int = 40,
    zero_frequency: str = "error",
) -> list[ModeSpec]:
    """Truncated oscillator modes coupled to a two-level emitter.

    Args:
        j: Spectral density to discretize.
        n_max: Highest occupation kept, or ``"auto"`` to pick it per mode from
            ``tail_tol``.
        temperature: ``k_B T / hbar`` of the initial thermal state.
        coupling: ``"rotating-wave"`` for ``g (a^+ |g><e| + a |e><g|)`` or
            ``"displacement"`` for ``g (a^+ + a) |e><e|``.
        tail_tol: Tail bound used by ``n_max="auto"``.
        n_max_cap: Upper limit of the automatic truncation.
        zero_frequency: ``"error"`` or ``"skip"`` for displacement modes at
            ``w = 0``, where the polaron counter-term is singular.

    Each mode's ``params`` records ``omega``, ``g``, ``n_max`` and the
    discarded thermal ``tail``.
    """
    if coupling not in ("rotating-wave", "displacement"):
        raise ValidationError(f"unknown coupling form {coupling!r}")
    if zero_frequency not in ("error", "skip"):
        raise ValidationError("zero_frequency must be 'error' or 'skip'")
    omegas, gs = discretize(j)
    modes = []
    for k, (w, g) in enumerate(zip(omegas, gs)):
        if coupling == "displacement" and w == 0:
            if zero_frequency == "skip":
                continue
            raise ValidationError(f"mode {k} has zero frequency; the polaron counter-term is singular")
        nm = auto_n_max(w, temperature, tail_tol, n_max_cap) if n_max == "auto" else int(n_max)
        if nm < 1:
            raise ValidationError("n_max must be at least 1")
        a = ladder(nm)
        number = a.conj().T @ a
        if coupling == "rotating-wave":
            h = w * np.kron(np.eye(2), number) + g * (np.kron(LOWER, a.conj().T) + np.kron(RAISE, a))
        else:
            h = w * np.kron(np.eye(2), number) + g * np.kron(EXCITED, a + a.conj().T)
        p, tail = thermal_weights(w, temperature, nm)
        modes.append(
            ModeSpec(
                nm + 1,
                h,
                np.diag(p).astype(np.complex128),
                label=f"boson{k}",
                params={"omega": float(w), "g": float(g), "n_max": nm, "tail": tail},
            )
        )
    return modes


def polaron_shift(modes: Sequence[ModeSpec]) -> float:
    """``sum_k g_k^2 / w_k`` over displacement-coupled modes."""
    return float(sum(m.params["g"] ** 2 / m.params["omega"] for m in modes))


def mode_parameters(modes: Sequence[ModeSpec]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([m.params["omega"] for m in modes], dtype=float),
        np.array([m.params["g"] for m in modes], dtype=float),
    )


# -- drives ----------------------------------------------------------------


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian pulse with area ``area`` and intensity FWHM ``fwhm``."""

    area: float
    center: float
    fwhm: float
    detuning: float = 0.0

    def __post_init__(self) -> None:
        if not self.fwhm > 0:
            raise ValidationError("pulse fwhm must be positive")

    @property
    def sigma(self) -> float:
        return self.fwhm / math.sqrt(8 * math.log(2))

    def envelope(self, t: float) -> complex:
        """``A / (sqrt(2 pi) sigma) exp(-(t - t0)^2 / (2 sigma^2)) exp(-i delta t)``; integrates to ``A``."""
        s = self.sigma
        amp = self.area / (math.sqrt(2 * math.pi) * s) * math.exp(-((t - self.center) ** 2) / (2 * s * s))
        return amp * complex(math.cos(self.detuning * t), -math.sin(self.detuning * t))


def drive_hamiltonian(omega: complex) -> np.ndarray:
    """``(omega |e><g| + conj(omega) |g><e|) / 2``."""
    return 0.5 * (omega * RAISE + np.conj(omega) * LOWER)


def gaussian_pulse_schedule(
    pulses: Sequence[PulseSpec],
    dt: float,
    static: np.ndarray | None = None,
    dissipators: Sequence[tuple[np.ndarray, float]] = (),
) -> SystemPropagatorSchedule:
    """System schedule for a sum of Gaussian pulses plus an optional static part."""
    pulses = list(pulses)
    base = np.zeros((2, 2), dtype=np.complex128) if static is None else np.asarray(static, dtype=np.complex128)

    def hamiltonian(t: float) -> np.ndarray:
        return base + drive_hamiltonian(sum((p.envelope(t) for p in pulses), 0j))

    return SystemPropagatorSchedule(2, dt, hamiltonian, dissipators)


def constant_drive_schedule(
    rabi: float,
    dt: float,
    static: np.ndarray | None = None,
    switch_on: float = 0.0,
) -> SystemPropagatorSchedule:
    """Constant Rabi drive ``(rabi / 2) sigma_x`` from ``switch_on`` on."""
    base = np.zeros((2, 2), dtype=np.complex128) if static is None else np.asarray(static, dtype=np.complex128)
    on = base + drive_hamiltonian(rabi)
    if switch_on <= 0:
        return SystemPropagatorSchedule(2, dt, on)

    def hamiltonian(t: float) -> np.ndarray:
        return on if t >= switch_on else base

    return SystemPropagatorSchedule(2, dt, hamiltonian)


HamiltonianFn = Callable[[float], np.ndarray]
