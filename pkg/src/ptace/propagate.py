"""Propagation of the extended density matrix through one or two PT-MPOs."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .closures import ExtractionKernel, finalize, trace_kernel
from .errors import DimensionError, NumericalAbort, ValidationError
from .liouville import SystemPropagatorSchedule, devectorize, vectorize
from .ptmpo import PTMPO

DEFAULT_UNRELIABLE_WINDOW = 5


@dataclass
class TimeSeries:
    """Sampled output of a propagation run.

    ``reliable`` marks points outside the final window where environment
    observables are known to be poorly resolved; ``reported`` is false for
    points that are computed but not meant for output (odd steps of a
    two-bath run).
    """

    times: np.ndarray
    rho: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)
    reliable: np.ndarray | None = None
    reported: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.times)
        if self.reliable is None:
            self.reliable = np.ones(n, dtype=bool)
        if self.reported is None:
            self.reported = np.ones(n, dtype=bool)
        for name, values in self.channels.items():
            if len(values) != n:
                raise DimensionError(f"channel {name!r} has {len(values)} points, expected {n}")

    def __len__(self) -> int:
        return len(self.times)

    def add_channel(self, name: str, values) -> None:
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != (len(self.times),):
            raise DimensionError(f"channel {name!r} has shape {values.shape}, expected ({len(self.times)},)")
        self.channels[name] = values

    def expectation(self, op) -> np.ndarray:
        """``Tr(op rho(t))`` for a system operator at every point."""
        op = np.asarray(op, dtype=np.complex128)
        return np.einsum("ij,tji->t", op, self.rho)

    def population(self, index: int) -> np.ndarray:
        return self.rho[:, index, index].real.copy()

    def mask(self, reliable_only: bool = True) -> np.ndarray:
        m = self.reported.copy()
        if reliable_only:
            m &= self.reliable
        return m


def _reliability(n_steps: int, pt_steps: int, window: int) -> np.ndarray:
    # the window is counted from the end of the PT-MPO, not of the run
    steps = np.arange(n_steps + 1)
    return steps <= pt_steps - window


def _run_length(pt_steps: int, n_steps: int | None) -> int:
    if n_steps is None:
        return pt_steps
    if not 1 <= n_steps <= pt_steps:
        raise ValidationError(f"cannot propagate {n_steps} steps through a PT-MPO of {pt_steps} steps")
    return n_steps


def _check_rho0(rho0, d_sys: int) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=np.complex128)
    if rho0.shape != (d_sys, d_sys):
        raise DimensionError(f"initial state must be {d_sys}x{d_sys}, got {rho0.shape}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10 or abs(np.trace(rho0) - 1) > 1e-10:
        raise ValidationError("initial state must be Hermitian with unit trace")
    return rho0


def _monitor(series: TimeSeries) -> None:
    traces = np.trace(series.rho, axis1=1, axis2=2)
    herm = 0.5 * (series.rho + np.conj(np.swapaxes(series.rho, 1, 2)))
    min_eig = min(float(np.linalg.eigvalsh(r)[0]) for r in herm)
    series.meta["max_trace_deviation"] = float(np.max(np.abs(traces - 1.0)))
    series.meta["min_eigenvalue"] = min_eig


def _step_system(schedule: SystemPropagatorSchedule, l: int, symmetric: bool):
    if symmetric:
        return schedule.propagator(l, 0.0, 0.5), schedule.propagator(l, 0.5, 0.5)
    return schedule.step(l), None


def propagate(
    pt: PTMPO,
    schedule: SystemPropagatorSchedule,
    rho0,
    requests: Sequence[str] = (),
    *,
    symmetric: bool = False,
    unreliable_window: int = DEFAULT_UNRELIABLE_WINDOW,
    n_steps: int | None = None,
) -> TimeSeries:
    """Run the path-sum iteration through ``pt``.

    Each step applies the free system propagator and then ``Q_l``; with
    ``symmetric=True`` the system propagator is split into two half steps
    around ``Q_l``. The reduced state is recovered from the trace closures and
    each requested observable from its closure.

    Environment observables lose accuracy on the last few bonds of a PT-MPO.
    Points within ``unreliable_window`` steps of the end of ``pt`` are flagged;
    stopping early with ``n_steps`` on a longer PT-MPO avoids the problem.
    """
    if schedule.d_sys != pt.d_sys:
        raise DimensionError(f"schedule has d_sys={schedule.d_sys}, PT-MPO has {pt.d_sys}")
    if abs(schedule.dt - pt.dt) > 1e-12 * pt.dt:
        raise DimensionError(f"schedule dt={schedule.dt} differs from PT-MPO dt={pt.dt}")
    d = pt.d_sys
    rho0 = _check_rho0(rho0, d)
    kernels: list[ExtractionKernel] = [finalize(pt.closures, name, d) for name in requests]
    qk = trace_kernel(pt.closures, d)
    n = _run_length(pt.n_steps, n_steps)

    rho_out = np.empty((n + 1, d, d), dtype=np.complex128)
    values = {k.name: np.empty(n + 1, dtype=np.complex128) for k in kernels}
    state = vectorize(rho0)[:, None]
    rho_out[0] = rho0
    for k in kernels:
        values[k.name][0] = k.value(0, state)
    for l in range(1, n + 1):
        m_a, m_b = _step_system(schedule, l, symmetric)
        state = m_a @ state
        state = np.einsum("daxp,xp->ad", pt.tensors[l - 1], state)
        if m_b is not None:
            state = m_b @ state
        if not np.all(np.isfinite(state)):
            raise NumericalAbort("non-finite extended state", l)
        rho_out[l] = devectorize(state @ qk.env_vectors[l], d)
        for k in kernels:
            values[k.name][l] = k.value(l, state)
    times = schedule.t0 + pt.dt * np.arange(n + 1)
    series = TimeSeries(times, rho_out, values, _reliability(n, pt.n_steps, unreliable_window))
    _monitor(series)
    return series


def _lookup_kernel(pt1: PTMPO, pt2: PTMPO, name: str) -> tuple[int, ExtractionKernel]:
    in1 = name in pt1.closures.observables
    in2 = name in pt2.closures.observables
    if in1 and in2:
        raise ValidationError(f"observable {name!r} is declared in both PT-MPOs")
    if in1:
        return 0, finalize(pt1.closures, name, pt1.d_sys)
    if in2:
        return 1, finalize(pt2.closures, name, pt2.d_sys)
    raise ValidationError(f"unknown observable {name!r}")


def propagate_two_baths(
    pt1: PTMPO,
    pt2: PTMPO,
    schedule: SystemPropagatorSchedule,
    rho0,
    requests: Sequence[str] = (),
    *,
    unreliable_window: int = DEFAULT_UNRELIABLE_WINDOW,
    n_steps: int | None = None,
) -> TimeSeries:
    """Propagate with two independent environments.

    Odd steps apply ``Q^[1] Q^[2]`` (``Q^[2]`` first) and even steps
    ``Q^[2] Q^[1]``, which makes every pair of steps symmetric. Odd steps are
    computed but marked as not reported.
    """
    if (pt1.n_steps, pt1.d_sys) != (pt2.n_steps, pt2.d_sys) or abs(pt1.dt - pt2.dt) > 1e-12 * pt1.dt:
        raise DimensionError("both PT-MPOs must share n_steps, d_sys and dt")
    if schedule.d_sys != pt1.d_sys or abs(schedule.dt - pt1.dt) > 1e-12 * pt1.dt:
        raise DimensionError("schedule does not match the PT-MPOs")
    d = pt1.d_sys
    rho0 = _check_rho0(rho0, d)
    lookups = [(name, *_lookup_kernel(pt1, pt2, name)) for name in requests]
    q1 = pt1.closures.trace
    q2 = pt2.closures.trace
    n = _run_length(pt1.n_steps, n_steps)

    def apply1(state, l):
        return np.einsum("daxp,xpq->adq", pt1.tensors[l - 1], state)

    def apply2(state, l):
        return np.einsum("eaxq,xpq->ape", pt2.tensors[l - 1], state)

    rho_out = np.empty((n + 1, d, d), dtype=np.complex128)
    values = {name: np.empty(n + 1, dtype=np.complex128) for name, *_ in lookups}
    state = vectorize(rho0)[:, None, None]

    def record(l, state):
        rho_out[l] = devectorize(np.einsum("apq,p,q->a", state, q1[l], q2[l]), d)
        for name, which, kern in lookups:
            if which == 0:
                env = np.einsum("apq,p,q->a", state, kern.env_vectors[l], q2[l])
            else:
                env = np.einsum("apq,p,q->a", state, q1[l], kern.env_vectors[l])
            values[name][l] = complex(kern.system_covector @ env)

    record(0, state)
    for l in range(1, n + 1):
        state = np.einsum("ax,xpq->apq", schedule.step(l), state)
        if l % 2:
            state = apply1(apply2(state, l), l)
        else:
            state = apply2(apply1(state, l), l)
        if not np.all(np.isfinite(state)):
            raise NumericalAbort("non-finite extended state", l)
        record(l, state)
    reported = np.arange(n + 1) % 2 == 0
    times = schedule.t0 + pt1.dt * np.arange(n + 1)
    series = TimeSeries(times, rho_out, values, _reliability(n, pt1.n_steps, unreliable_window), reported)
    _monitor(series)
    return series


def integrate_correlation_channel(
    series: TimeSeries,
    channel: str,
    weight: Callable[[np.ndarray], np.ndarray] | None = None,
    name: str | None = None,
) -> np.ndarray:
    """Cumulative trapezoidal integral of ``weight(channel)`` over the reported points.

    ``weight`` maps the complex channel to the integrand (for example
    ``lambda c: -2 * c.imag``); the identity is used when omitted. The result
    is stored as channel ``name`` when given, with values at unreported points
    filled by linear interpolation, and returned.
    """
    try:
        raw = series.channels[channel]
    except KeyError:
        raise ValidationError(f"unknown channel {channel!r}") from None
    integrand = np.asarray(raw if weight is None else weight(raw), dtype=np.complex128)
    keep = series.reported
    t = series.times[keep]
    acc = cumulative_trapezoid(integrand[keep], t, initial=0.0)
    if np.all(keep):
        out = acc.astype(np.complex128)
    else:
        out = np.interp(series.times, t, acc.real) + 1j * np.interp(series.times, t, acc.imag)
    if name is not None:
        series.add_channel(name, out)
    return out


def time_derivative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Central finite differences, one-sided at the ends."""
    return np.gradient(np.asarray(values), np.asarray(times), edge_order=1)
