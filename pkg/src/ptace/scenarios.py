"""Scenario definitions: parameter schemas, model assembly and verification metrics.

Each scenario kind maps a flat parameter dictionary onto modes, PT-MPOs and a
system schedule, propagates, and returns the output channels together with a
report of conservation residuals and deviations from analytic references.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .closures import ObservableSpec
from .errors import ValidationError
from .liouville import ModeSpec, SystemPropagatorSchedule
from .models import (
    EXCITED,
    GROUND,
    LOWER,
    RAISE,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SPIN_X,
    SPIN_Y,
    SPIN_Z,
    PulseSpec,
    SpectralDensity,
    boson_modes,
    central_spin_modes,
    constant_drive_schedule,
    discretize,
    drive_hamiltonian,
    fermionic_lead_modes,
    gaussian_pulse_schedule,
    kelvin_to_rate,
    lead_current_parts,
    mev_to_rate,
    mode_parameters,
    polaron_shift,
)
from .oracle import trotter_reference
from .propagate import TimeSeries, integrate_correlation_channel, propagate, propagate_two_baths, time_derivative
from .ptmpo import PTMPO, build_ace, load_ptmpo, save_ptmpo

REQUIRED = object()


@dataclass(frozen=True)
class Param:
    kind: str  # int | float | bool | str | floats | names | choice:<a>|<b> | int_or_auto
    default: object = REQUIRED
    doc: str = ""


COMMON: dict[str, Param] = {
    "kind": Param("str", doc="scenario kind"),
    "n_steps": Param("int", doc="number of reported time steps"),
    "dt": Param("float", doc="time step"),
    "eps": Param("float", doc="relative SVD threshold"),
    "eps_backward": Param("float", None, "separate backward-sweep threshold"),
    "time_unit": Param("str", None, "time unit label"),
    "output": Param("str", "ptace_output.csv", "CSV output path"),
    "report": Param("str", None, "JSON report path (default: <output stem>.report.json)"),
    "observables": Param("names", None, "channels to write, in order (default: all)"),
    "unreliable_window": Param("int", 5, "steps flagged unreliable at the end of the PT-MPO"),
    "pad_steps": Param("int", 0, "extra PT-MPO steps built beyond n_steps"),
    "splitting": Param(
        "choice:auto|first_order|symmetric",
        "auto",
        "system/environment splitting; auto is symmetric for one environment",
    ),
    "trace_tolerance": Param("float", 1e-6, "trace-preservation monitor threshold"),
}

_LEAD = {
    "n_modes": Param("int", 64),
    "kappa": Param("float", 1.0),
    "omega_bw": Param("float", 64.0),
    "site_energy": Param("float", 0.0),
}

_PHONON = {
    "n_modes": Param("int", 50),
    "omega_bw": Param("float", 7.0, "upper end of the frequency window"),
    "c_e": Param("float", 0.1271),
    "c_h": Param("float", -0.0635),
    "omega_e": Param("float", 2.555),
    "omega_h": Param("float", 2.938),
    "temperature_k": Param("float", 4.0),
    "n_max": Param("int_or_auto", "auto"),
    "tail_tol": Param("float", 1e-3),
    "n_max_cap": Param("int", 40),
}

KIND_PARAMS: dict[str, dict[str, Param]] = {
    "central_spin": {
        "n_spins": Param("int", 8),
        "coupling": Param("float", 1.0),
        "seed": Param("int", 0),
        "brute_force_check": Param("bool", True),
    },
    "single_lead": dict(_LEAD),
    "two_leads": dict(_LEAD),
    "photon_flat": {
        "n_modes": Param("int", 100),
        "kappa": Param("float", 1.0),
        "omega_bw": Param("float", 50.0),
        "n_max": Param("int", 1),
    },
    "photon_lorentzian": {
        "n_modes": Param("int", 200),
        "kappa": Param("float", 1.0),
        "gamma": Param("float", 0.25),
        "omega_bw": Param("float", 200.0),
        "n_max": Param("int", 2),
        "initial_state": Param("choice:excited|ground", None),
        "pulse_areas": Param("floats", ()),
        "pulse_centers": Param("floats", ()),
        "pulse_fwhm": Param("floats", ()),
    },
    "spin_boson_cw": {**_PHONON, "rabi": Param("float", 1.0)},
    "spin_boson_pulse": {
        **_PHONON,
        "pulse_area": Param("float", 3 * math.pi),
        "pulse_center": Param("float", 7.0),
        "pulse_fwhm": Param("float", 5.0),
        "detuning_mev": Param("float", 1.5),
    },
    "custom": {
        "density": Param("choice:flat|bump|lorentzian|phonon", "flat"),
        "coupling_form": Param("choice:rotating-wave|displacement", "rotating-wave"),
        "n_modes": Param("int", 20),
        "kappa": Param("float", 1.0),
        "gamma": Param("float", 1.0),
        "omega_bw": Param("float", 10.0),
        "window_min": Param("float", None),
        "window_max": Param("float", None),
        "c_e": Param("float", 0.1271),
        "c_h": Param("float", -0.0635),
        "omega_e": Param("float", 2.555),
        "omega_h": Param("float", 2.938),
        "n_max": Param("int_or_auto", 1),
        "temperature": Param("float", 0.0, "k_B T / hbar in inverse time units"),
        "tail_tol": Param("float", 1e-3),
        "n_max_cap": Param("int", 40),
        "rabi": Param("float", 0.0),
        "detuning": Param("float", 0.0),
        "pulse_areas": Param("floats", ()),
        "pulse_centers": Param("floats", ()),
        "pulse_fwhm": Param("floats", ()),
        "initial_state": Param("choice:excited|ground", "excited"),
    },
}

DEFAULT_TIME_UNIT = {
    "spin_boson_cw": "ps",
    "spin_boson_pulse": "ps",
}


def schema(kind: str) -> dict[str, Param]:
    if kind not in KIND_PARAMS:
        raise ValidationError(f"kind: unknown scenario kind {kind!r}; expected one of {sorted(KIND_PARAMS)}")
    return {**COMMON, **KIND_PARAMS[kind]}


def _check_positive(params: dict, *keys: str) -> None:
    for key in keys:
        if key in params and params[key] is not None and not params[key] > 0:
            raise ValidationError(f"{key}: must be positive, got {params[key]}")


def validate_params(params: dict) -> None:
    """Cross-field checks shared by every scenario kind."""
    _check_positive(params, "n_steps", "dt", "n_modes", "n_spins", "kappa", "omega_bw", "gamma", "n_max_cap")
    for key in ("eps", "eps_backward"):
        value = params.get(key)
        if value is not None and not 0.0 <= value < 1.0:
            raise ValidationError(f"{key}: must lie in [0, 1), got {value}")
    for key in ("unreliable_window", "pad_steps"):
        if params[key] < 0:
            raise ValidationError(f"{key}: must be non-negative")
    if params.get("n_spins", 1) < 0:
        raise ValidationError("n_spins: must be non-negative")
    for key in ("temperature", "temperature_k"):
        if params.get(key, 0.0) < 0:
            raise ValidationError(f"{key}: must be non-negative")
    n_max = params.get("n_max")
    if isinstance(n_max, int) and n_max < 1:
        raise ValidationError(f"n_max: must be at least 1, got {n_max}")
    if "pulse_areas" in params:
        lengths = {len(params[k]) for k in ("pulse_areas", "pulse_centers", "pulse_fwhm")}
        if len(lengths) > 1:
            raise ValidationError("pulse_areas, pulse_centers and pulse_fwhm must have equal lengths")
        if any(not w > 0 for w in params["pulse_fwhm"]):
            raise ValidationError("pulse_fwhm: every entry must be positive")
    elif "pulse_fwhm" in params:
        _check_positive(params, "pulse_fwhm")
    if params["kind"] == "two_leads" and params["splitting"] != "auto":
        raise ValidationError("splitting: two environments always use the interleaved order; use auto")


@dataclass
class ScenarioResult:
    kind: str
    series: TimeSeries
    channel_order: list[str]
    report: dict
    pts: list[PTMPO] = field(default_factory=list)


@dataclass
class _Plan:
    """Everything needed to build and propagate one scenario."""

    modes: list[list[ModeSpec]]
    observables: list[list[ObservableSpec]]
    schedule: SystemPropagatorSchedule
    rho0: np.ndarray
    requests: list[str]
    post: Callable[[TimeSeries, dict], dict]
    extra: dict = field(default_factory=dict)


# -- plans -----------------------------------------------------------------


def _plan_central_spin(p: dict) -> _Plan:
    modes = central_spin_modes(p["n_spins"], p["coupling"], p["seed"])
    n = len(modes)
    obs = [
        ObservableSpec("sx_env", np.eye(2), [SPIN_X] * n),
        ObservableSpec("sy_env", np.eye(2), [SPIN_Y] * n),
        ObservableSpec("sz_env", np.eye(2), [SPIN_Z] * n),
    ]
    sched = SystemPropagatorSchedule(2, p["dt"])
    rho0 = np.full((2, 2), 0.5, dtype=np.complex128)

    def post(series: TimeSeries, rep: dict) -> dict:
        for name, op in (("S_x", SPIN_X), ("S_y", SPIN_Y), ("S_z", SPIN_Z)):
            series.add_channel(name, series.expectation(op))
        total = series.channels["S_x"] + series.channels["sx_env"]
        series.add_channel("total_sx", total)
        dev = np.abs(total.real - total[0].real)
        mask = series.mask()
        rep["residuals"]["total_sx_conservation"] = float(dev[mask].max())
        rep["residuals"]["total_sx_conservation_all_points"] = float(dev.max())
        rep["seed"] = p["seed"]
        return rep

    return _Plan([modes], [obs], sched, rho0, ["sx_env", "sy_env", "sz_env"], post)


def _lead_density(p: dict) -> SpectralDensity:
    return SpectralDensity("bump", p["n_modes"], p["omega_bw"], kappa=p["kappa"])


def _current_observable(name: str, gs) -> ObservableSpec:
    return ObservableSpec(name, SIGMA_MINUS, lead_current_parts(gs), fermionic_string=True)


def _lead_mask(series: TimeSeries, p: dict) -> np.ndarray:
    return series.mask() & (series.times > 3.0 / p["omega_bw"])


def _plan_single_lead(p: dict) -> _Plan:
    j = _lead_density(p)
    _, gs = discretize(j)
    modes = fermionic_lead_modes(j, filled=True)
    obs = [_current_observable("corr1", gs)]
    n_op = SIGMA_PLUS @ SIGMA_MINUS
    sched = SystemPropagatorSchedule(2, p["dt"], p["site_energy"] * n_op)
    rho0 = np.diag([1.0, 0.0]).astype(np.complex128)
    kappa = p["kappa"]

    def post(series: TimeSeries, rep: dict) -> dict:
        series.add_channel("n_S", series.expectation(n_op))
        series.add_channel("I1", 2 * series.channels["corr1"].imag)
        t = series.times
        mask = _lead_mask(series, p)
        ref_n = 1 - np.exp(-kappa * t)
        ref_i = -kappa * np.exp(-kappa * t)
        rep["references"]["n_S_vs_markov"] = _maxdev(series.channels["n_S"].real, ref_n, mask)
        rep["references"]["I1_vs_markov_over_kappa"] = _maxdev(series.channels["I1"].real, ref_i, mask) / kappa
        didt = time_derivative(t, series.channels["n_S"].real)
        rep["residuals"]["particle_conservation_over_kappa"] = (
            _maxdev(didt, -series.channels["I1"].real, mask) / kappa
        )
        return rep

    return _Plan([modes], [obs], sched, rho0, ["corr1"], post)


def _plan_two_leads(p: dict) -> _Plan:
    j = _lead_density(p)
    _, gs = discretize(j)
    lead1 = fermionic_lead_modes(j, filled=True)
    lead2 = fermionic_lead_modes(j, filled=False)
    n_op = SIGMA_PLUS @ SIGMA_MINUS
    sched = SystemPropagatorSchedule(2, p["dt"], p["site_energy"] * n_op)
    rho0 = np.diag([1.0, 0.0]).astype(np.complex128)
    kappa = p["kappa"]

    def post(series: TimeSeries, rep: dict) -> dict:
        series.add_channel("n_S", series.expectation(n_op))
        series.add_channel("I1", 2 * series.channels["corr1"].imag)
        series.add_channel("I2", 2 * series.channels["corr2"].imag)
        t = series.times
        keep = series.reported
        # derivative over the reported (even) steps only
        didt = np.full(len(t), np.nan)
        didt[keep] = time_derivative(t[keep], series.channels["n_S"].real[keep])
        series.add_channel("I2_conservation", -didt - series.channels["I1"].real)
        mask = _lead_mask(series, p)
        ref_n = 0.5 * (1 - np.exp(-2 * kappa * t))
        ref_i = -0.5 * kappa * (1 + np.exp(-2 * kappa * t))
        rep["references"]["n_S_vs_markov"] = _maxdev(series.channels["n_S"].real, ref_n, mask)
        rep["references"]["I1_vs_markov_over_kappa"] = _maxdev(series.channels["I1"].real, ref_i, mask) / kappa
        resid = didt + series.channels["I1"].real + series.channels["I2"].real
        rep["residuals"]["particle_conservation_over_kappa"] = float(np.max(np.abs(resid[mask]))) / kappa
        return rep

    obs = [[_current_observable("corr1", gs)], [_current_observable("corr2", gs)]]
    return _Plan([lead1, lead2], obs, sched, rho0, ["corr1", "corr2"], post)


def _emitter_observables(modes: list[ModeSpec], direct: bool) -> list[ObservableSpec]:
    _, gs = mode_parameters(modes)
    obs = [ObservableSpec("corr", RAISE, [g * _ladder_of(m) for g, m in zip(gs, modes)])]
    if direct:
        obs.append(ObservableSpec("n_ph", np.eye(2), [_number_of(m) for m in modes]))
    return obs


def _ladder_of(mode: ModeSpec) -> np.ndarray:
    from .models import ladder

    return ladder(mode.mode_dim - 1)


def _number_of(mode: ModeSpec) -> np.ndarray:
    a = _ladder_of(mode)
    return a.conj().T @ a


def _photon_post(series: TimeSeries, rep: dict) -> None:
    series.add_channel("n_e", series.expectation(EXCITED))
    integrate_correlation_channel(series, "corr", lambda c: -2 * c.imag, name="n_ph_int")


def _plan_photon_flat(p: dict) -> _Plan:
    j = SpectralDensity("flat", p["n_modes"], p["omega_bw"], kappa=p["kappa"])
    modes = boson_modes(j, p["n_max"], 0.0, "rotating-wave")
    obs = _emitter_observables(modes, direct=True)
    sched = SystemPropagatorSchedule(2, p["dt"])
    kappa = p["kappa"]

    def post(series: TimeSeries, rep: dict) -> dict:
        _photon_post(series, rep)
        t = series.times
        mask = series.mask()
        decay = np.exp(-kappa * t)
        ch = series.channels
        rep["references"]["n_e_vs_exp"] = _maxdev(ch["n_e"].real, decay, mask)
        rep["references"]["n_ph_int_vs_markov"] = _maxdev(ch["n_ph_int"].real, 1 - decay, mask)
        rep["references"]["n_ph_direct_vs_markov"] = _maxdev(ch["n_ph"].real, 1 - decay, mask)
        rep["residuals"]["excitation_conservation"] = _maxdev(ch["n_e"].real + ch["n_ph_int"].real, 1.0, mask)
        return rep

    return _Plan([modes], [obs], sched, EXCITED.copy(), ["corr", "n_ph"], post)


def _pulses(p: dict) -> list[PulseSpec]:
    return [
        PulseSpec(a, c, w, p.get("detuning", 0.0))
        for a, c, w in zip(p["pulse_areas"], p["pulse_centers"], p["pulse_fwhm"])
    ]


def lorentzian_reference(kappa: float, gamma: float, t: np.ndarray) -> np.ndarray:
    """Excited population for the Lorentzian bath in the single-excitation sector.

    The memory kernel ``kappa^2 exp(-gamma |tau|)`` turns the amplitude equation
    into ``c'' + gamma c' + kappa^2 c = 0`` with ``c(0) = 1``, ``c'(0) = 0``.
    """
    disc = complex(gamma**2 / 4 - kappa**2) ** 0.5
    if abs(disc) < 1e-12:
        c = (1 + gamma / 2 * t) * np.exp(-gamma / 2 * t)
    else:
        r1 = -gamma / 2 + disc
        r2 = -gamma / 2 - disc
        c = (r1 * np.exp(r2 * t) - r2 * np.exp(r1 * t)) / (r1 - r2)
    return np.abs(c) ** 2


def _plan_photon_lorentzian(p: dict) -> _Plan:
    j = SpectralDensity("lorentzian", p["n_modes"], p["omega_bw"], kappa=p["kappa"], gamma=p["gamma"])
    modes = boson_modes(j, p["n_max"], 0.0, "rotating-wave")
    obs = _emitter_observables(modes, direct=False)
    pulses = _pulses(p)
    init = p["initial_state"] or ("ground" if pulses else "excited")
    rho0 = (EXCITED if init == "excited" else GROUND).copy()
    sched = gaussian_pulse_schedule(pulses, p["dt"]) if pulses else SystemPropagatorSchedule(2, p["dt"])

    def post(series: TimeSeries, rep: dict) -> dict:
        _photon_post(series, rep)
        mask = series.mask()
        ch = series.channels
        rep["final_n_ph_int"] = float(ch["n_ph_int"].real[mask][-1])
        if not pulses and init == "excited":
            ref = lorentzian_reference(p["kappa"], p["gamma"], series.times)
            rep["references"]["n_e_vs_lorentzian"] = _maxdev(ch["n_e"].real, ref, mask)
            rep["residuals"]["excitation_conservation"] = _maxdev(ch["n_e"].real + ch["n_ph_int"].real, 1.0, mask)
        return rep

    return _Plan([modes], [obs], sched, rho0, ["corr"], post)


def _phonon_modes(p: dict, temperature: float) -> list[ModeSpec]:
    j = SpectralDensity(
        "phonon",
        p["n_modes"],
        p["omega_bw"],
        c_e=p["c_e"],
        c_h=p["c_h"],
        omega_e=p["omega_e"],
        omega_h=p["omega_h"],
        window=(p.get("window_min") or 0.0, p.get("window_max") or p["omega_bw"]),
    )
    return boson_modes(
        j,
        p["n_max"],
        temperature,
        "displacement",
        tail_tol=p["tail_tol"],
        n_max_cap=p["n_max_cap"],
        zero_frequency="skip",
    )


def _energy_observables(modes: list[ModeSpec]) -> list[ObservableSpec]:
    omegas, gs = mode_parameters(modes)
    creations = [_ladder_of(m).conj().T for m in modes]
    return [
        ObservableSpec("o1", EXCITED, [g * c for g, c in zip(gs, creations)]),
        ObservableSpec("o2", EXCITED, [2 * w * g * c for w, g, c in zip(omegas, gs, creations)]),
    ]


def _energy_post(series: TimeSeries, rep: dict, schedule: SystemPropagatorSchedule, shift: float) -> None:
    ch = series.channels
    series.add_channel("n_e", series.expectation(EXCITED))
    h_ps = shift * EXCITED
    drive = np.array(
        [np.trace((schedule.hamiltonian_at(t) - h_ps) @ r) for t, r in zip(series.times, series.rho)],
        dtype=np.complex128,
    )
    series.add_channel("H_S", drive)
    series.add_channel("H_PS", shift * ch["n_e"])
    series.add_channel("H_I", 2 * ch["o1"].real)
    integrate_correlation_channel(series, "o2", lambda c: c.imag, name="dH_E0")
    series.add_channel("H_total", ch["H_S"].real + ch["H_PS"].real + ch["H_I"].real + ch["dH_E0"].real)


def _spin_boson_modes(p: dict) -> tuple[list[ModeSpec], float, dict]:
    unit = p["time_unit"] or "ps"
    temperature = kelvin_to_rate(p["temperature_k"], unit)
    modes = _phonon_modes(p, temperature)
    info = {
        "temperature_rate": temperature,
        "mode_n_max": [m.params["n_max"] for m in modes],
        "max_thermal_tail": max((m.params["tail"] for m in modes), default=0.0),
    }
    return modes, polaron_shift(modes), info


def _plan_spin_boson_cw(p: dict) -> _Plan:
    modes, shift, info = _spin_boson_modes(p)
    sched = constant_drive_schedule(p["rabi"], p["dt"], static=shift * EXCITED)

    def post(series: TimeSeries, rep: dict) -> dict:
        _energy_post(series, rep, sched, shift)
        mask = series.mask()
        total = series.channels["H_total"].real
        scale = float(np.max(np.abs(series.channels["H_S"].real[mask])))
        drift = float(np.max(np.abs(total[mask] - total[1])))
        rep["residuals"]["energy_drift"] = drift
        rep["residuals"]["energy_drift_relative"] = drift / scale if scale > 0 else math.inf
        rep["polaron_shift"] = shift
        rep.update(info)
        return rep

    return _Plan([modes], [_energy_observables(modes)], sched, GROUND.copy(), ["o1", "o2"], post)


def _plan_spin_boson_pulse(p: dict) -> _Plan:
    modes, shift, info = _spin_boson_modes(p)
    detuning = mev_to_rate(p["detuning_mev"], p["time_unit"] or "ps")
    pulse = PulseSpec(p["pulse_area"], p["pulse_center"], p["pulse_fwhm"], detuning)
    sched = gaussian_pulse_schedule([pulse], p["dt"], static=shift * EXCITED)

    def post(series: TimeSeries, rep: dict) -> dict:
        _energy_post(series, rep, sched, shift)
        rep["polaron_shift"] = shift
        rep["detuning_rate"] = detuning
        rep["final_n_e"] = float(series.channels["n_e"].real[series.mask()][-1])
        rep.update(info)
        return rep

    return _Plan([modes], [_energy_observables(modes)], sched, GROUND.copy(), ["o1", "o2"], post)


def _plan_custom(p: dict) -> _Plan:
    window = None
    if p["window_min"] is not None or p["window_max"] is not None:
        if p["window_min"] is None or p["window_max"] is None:
            raise ValidationError("window_min and window_max must be given together")
        window = (p["window_min"], p["window_max"])
    j = SpectralDensity(
        p["density"],
        p["n_modes"],
        p["omega_bw"],
        kappa=p["kappa"],
        gamma=p["gamma"],
        c_e=p["c_e"],
        c_h=p["c_h"],
        omega_e=p["omega_e"],
        omega_h=p["omega_h"],
        window=window,
    )
    form = p["coupling_form"]
    modes = boson_modes(
        j,
        p["n_max"],
        p["temperature"],
        form,
        tail_tol=p["tail_tol"],
        n_max_cap=p["n_max_cap"],
        zero_frequency="skip",
    )
    shift = polaron_shift(modes) if form == "displacement" else 0.0
    static = shift * EXCITED + 0.5 * p["detuning"] * (EXCITED - GROUND)
    pulses = _pulses(p)
    if pulses:
        sched = gaussian_pulse_schedule(pulses, p["dt"], static=static)
    else:
        sched = SystemPropagatorSchedule(2, p["dt"], static + drive_hamiltonian(p["rabi"]))
    rho0 = (EXCITED if p["initial_state"] == "excited" else GROUND).copy()
    if form == "rotating-wave":
        obs = _emitter_observables(modes, direct=False)
        requests = ["corr"]
    else:
        obs = _energy_observables(modes)
        requests = ["o1", "o2"]

    def post(series: TimeSeries, rep: dict) -> dict:
        if form == "rotating-wave":
            _photon_post(series, rep)
        else:
            _energy_post(series, rep, sched, shift)
        rep["mode_n_max"] = [m.params["n_max"] for m in modes]
        return rep

    return _Plan([modes], [obs], sched, rho0, requests, post)


PLANS: dict[str, Callable[[dict], _Plan]] = {
    "central_spin": _plan_central_spin,
    "single_lead": _plan_single_lead,
    "two_leads": _plan_two_leads,
    "photon_flat": _plan_photon_flat,
    "photon_lorentzian": _plan_photon_lorentzian,
    "spin_boson_cw": _plan_spin_boson_cw,
    "spin_boson_pulse": _plan_spin_boson_pulse,
    "custom": _plan_custom,
}


def _maxdev(values, reference, mask) -> float:
    diff = np.abs(np.asarray(values) - reference)
    if not np.any(mask):
        return float("nan")
    return float(np.max(diff[mask]))


# -- running ---------------------------------------------------------------


def _pt_paths(path: str | Path, count: int) -> list[Path]:
    path = Path(path)
    return [path] + [path.with_name(f"{path.name}.{i + 1}") for i in range(1, count)]


def _check_loaded(pt: PTMPO, p: dict, observables: list[ObservableSpec], total_steps: int) -> None:
    if abs(pt.dt - p["dt"]) > 1e-12 * p["dt"]:
        raise ValidationError(f"loaded PT-MPO has dt={pt.dt}, configuration asks for {p['dt']}")
    if pt.n_steps < p["n_steps"]:
        raise ValidationError(f"loaded PT-MPO has {pt.n_steps} steps, configuration asks for {p['n_steps']}")
    if pt.n_steps != total_steps:
        raise ValidationError(f"loaded PT-MPO has {pt.n_steps} steps, expected n_steps + pad_steps = {total_steps}")
    missing = [o.name for o in observables if o.name not in pt.closures.observables]
    if missing:
        raise ValidationError(f"loaded PT-MPO lacks observable closures {missing}")


def run_scenario(
    params: dict,
    *,
    load_pt: str | Path | None = None,
    save_pt: str | Path | None = None,
    on_mode: Callable[[int, PTMPO], None] | None = None,
) -> ScenarioResult:
    """Build (or load) the PT-MPOs of a scenario, propagate and evaluate it.

    ``on_mode`` is forwarded to :func:`build_ace` for every environment.
    """
    kind = params["kind"]
    plan = PLANS[kind](params)
    total_steps = params["n_steps"] + params["pad_steps"]
    eps_bw = params["eps_backward"]
    t0 = time.perf_counter()
    pts: list[PTMPO] = []
    if load_pt is not None:
        for path, obs in zip(_pt_paths(load_pt, len(plan.modes)), plan.observables):
            pt = load_ptmpo(path)
            _check_loaded(pt, params, obs, total_steps)
            pts.append(pt)
    else:
        for modes, obs in zip(plan.modes, plan.observables):
            pts.append(
                build_ace(
                    modes,
                    total_steps,
                    params["dt"],
                    params["eps"],
                    obs,
                    d_sys=2,
                    eps_backward=eps_bw,
                    on_mode=on_mode,
                )
            )
    t_build = time.perf_counter() - t0
    if save_pt is not None:
        for path, pt in zip(_pt_paths(save_pt, len(pts)), pts):
            save_ptmpo(pt, path)

    t1 = time.perf_counter()
    window = params["unreliable_window"]
    splitting = params["splitting"]
    if splitting == "auto":
        splitting = "symmetric" if len(pts) == 1 else "interleaved_two_bath"
    if len(pts) == 1:
        series = propagate(
            pts[0],
            plan.schedule,
            plan.rho0,
            plan.requests,
            symmetric=splitting == "symmetric",
            unreliable_window=window,
            n_steps=params["n_steps"],
        )
    else:
        series = propagate_two_baths(
            pts[0], pts[1], plan.schedule, plan.rho0, plan.requests, unreliable_window=window, n_steps=params["n_steps"]
        )
    t_prop = time.perf_counter() - t1

    report = {
        "kind": kind,
        "n_steps": params["n_steps"],
        "pad_steps": params["pad_steps"],
        "dt": params["dt"],
        "time_unit": params["time_unit"] or DEFAULT_TIME_UNIT.get(kind, "1/kappa" if "kappa" in params else "1/J"),
        "eps": params["eps"],
        "eps_backward": params["eps"] if eps_bw is None else eps_bw,
        "splitting": splitting,
        "unreliable_window": window,
        "n_modes": [pt.n_modes for pt in pts],
        "peak_bond_dims": [pt.peak_bond_dims for pt in pts],
        "max_bond_dim": max(pt.max_bond for pt in pts),
        "loaded_pt": load_pt is not None,
        "wall_time_build_s": t_build,
        "wall_time_propagate_s": t_prop,
        "max_trace_deviation": series.meta["max_trace_deviation"],
        "trace_within_tolerance": series.meta["max_trace_deviation"] <= params["trace_tolerance"],
        "min_eigenvalue": series.meta["min_eigenvalue"],
        "residuals": {},
        "references": {},
    }
    report = plan.post(series, report)
    if kind == "central_spin" and params["brute_force_check"]:
        report["brute_force_check"] = _central_spin_cross_check(params)

    order = _channel_order(series, plan, params)
    report["channels"] = order
    return ScenarioResult(kind, series, order, report, pts)


INTERNAL_CHANNELS = {"corr1", "corr2", "o1", "o2"}


def _channel_order(series: TimeSeries, plan: _Plan, params: dict) -> list[str]:
    requested = params["observables"]
    if requested is None:
        return [c for c in series.channels if c not in INTERNAL_CHANNELS]
    unknown = [c for c in requested if c not in series.channels]
    if unknown:
        raise ValidationError(f"observables: unknown channels {unknown}; available: {sorted(series.channels)}")
    return list(requested)


def _central_spin_cross_check(params: dict, n_spins: int = 2, max_steps: int = 60) -> dict:
    """Compare a two-spin PT-MPO run with brute-force joint propagation."""
    modes = central_spin_modes(n_spins, params["coupling"], params["seed"])
    n = min(params["n_steps"], max_steps)
    pad = params["unreliable_window"]
    obs = [ObservableSpec("sx_env", np.eye(2), [SPIN_X] * n_spins)]
    pt = build_ace(modes, n + pad, params["dt"], params["eps"], obs, eps_backward=params["eps_backward"])
    sched = SystemPropagatorSchedule(2, params["dt"])
    rho0 = np.full((2, 2), 0.5, dtype=np.complex128)
    series = propagate(pt, sched, rho0, ["sx_env"], n_steps=n)
    rhos, vals = trotter_reference(modes, sched, rho0, n, obs)
    return {
        "n_spins": n_spins,
        "n_steps": n,
        "max_rho_deviation": float(np.max(np.abs(series.rho - rhos))),
        "max_sx_env_deviation": float(np.max(np.abs(series.channels["sx_env"] - vals["sx_env"]))),
    }
