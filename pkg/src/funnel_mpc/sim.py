"""Trajectory simulation under piecewise-constant inputs.

Two integrators cover the two roles inside the controller. Optimizer
predictions use a fixed-step classical Runge-Kutta scheme: bit-for-bit
deterministic and smooth in the control parameters, which keeps finite
difference gradients clean. The closed loop uses an adaptive embedded
Runge-Kutta 5(4) scheme with the Dormand-Prince coefficients. Both
integrators restart at every control switch time, so no step straddles an
input discontinuity, and every switch time is a recorded sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plant import PlantModel

__all__ = [
    "ControlSequence",
    "Trajectory",
    "IntegratorConfig",
    "IntegrationError",
    "DivergenceError",
    "StiffnessError",
    "integrate_fixed",
    "integrate_adaptive",
    "concat_trajectories",
]


class IntegrationError(RuntimeError):
    """Base class for simulation failures."""


class DivergenceError(IntegrationError):
    """A state stopped being finite; carries the last finite sample time."""

    def __init__(self, last_time: float):
        super().__init__(f"state diverged, last finite sample at t={last_time:.6g}")
        self.last_time = last_time


class StiffnessError(IntegrationError):
    """Adaptive step size underflowed; the problem is too stiff here."""

    def __init__(self, time: float, step_size: float):
        super().__init__(
            f"step size underflow at t={time:.6g} (h={step_size:.3e}); problem too stiff"
        )
        self.time = time
        self.step_size = step_size


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances of the adaptive closed-loop integrator."""

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 0.01

    def __post_init__(self):
        if self.rtol <= 0.0 or self.atol <= 0.0 or self.max_step <= 0.0:
            raise ValueError("integrator tolerances and max_step must be positive")


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """Piecewise-constant input: N levels of equal duration from t_start.

    The sequence is right continuous: level k is active on
    [t_start + k step, t_start + (k+1) step). Levels must respect
    |value| <= bound exactly; the solver clamps before constructing one.
    """

    t_start: float
    step: float
    values: np.ndarray
    bound: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_1d(np.asarray(self.values, dtype=float)))
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("values must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.bound <= 0.0:
            raise ValueError("bound must be positive")
        if np.any(np.abs(self.values) > self.bound):
            raise ValueError("control levels exceed the bound")

    @property
    def n_intervals(self) -> int:
        return int(self.values.size)

    @property
    def span(self) -> float:
        return self.n_intervals * self.step

    @property
    def t_end(self) -> float:
        return self.t_start + self.span

    def switch_times(self) -> np.ndarray:
        """Interior level boundaries (empty for a single interval)."""
        return self.t_start + self.step * np.arange(1, self.n_intervals)

    def value_at(self, t: float) -> float:
        """Active level at time t, right continuous, clamped to the span."""
        idx = int(math.floor((t - self.t_start) / self.step))
        idx = min(max(idx, 0), self.n_intervals - 1)
        return float(self.values[idx])


@dataclass(eq=False)
class Trajectory:
    """Sampled trajectory with outputs, output rates and applied inputs.

    ``inputs`` follows the right-continuous step convention: the sample at
    a switch time carries the new level. Outputs and output rates are
    recorded consistently with the stored states and inputs.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    output_rates: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        self.output_rates = np.asarray(self.output_rates, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        n = self.times.size
        if n < 1:
            raise ValueError("trajectory needs at least one sample")
        if not (
            self.states.shape[0] == n
            and self.outputs.shape == (n,)
            and self.output_rates.shape == (n,)
            and self.inputs.shape == (n,)
        ):
            raise ValueError("sample arrays have inconsistent lengths")
        if n > 1 and not np.all(np.diff(self.times) > 0.0):
            raise ValueError("sample times must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return int(self.times.size)

    def max_spacing(self) -> float:
        if self.n_samples < 2:
            return 0.0
        return float(np.max(np.diff(self.times)))


def _check_start(t0: float, u: ControlSequence):
    if abs(t0 - u.t_start) > 1e-9:
        raise ValueError("control sequence must start at the integration start time")


def integrate_fixed(pm: PlantModel, x0, t0: float, u: ControlSequence, substeps: int = 4) -> Trajectory:
    """Classical RK4 with exactly ``substeps`` equal steps per control interval.

    Sample times are computed by multiplication, never by accumulation, so
    repeated runs are bit reproducible. Raises :class:`DivergenceError` as
    soon as a state stops being finite.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    _check_start(t0, u)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (pm.n,):
        raise ValueError(f"initial state must have shape ({pm.n},), got {x.shape}")

    n_int = u.n_intervals
    h = u.step / substeps
    s_total = n_int * substeps
    times = t0 + h * np.arange(s_total + 1)
    states = np.empty((s_total + 1, pm.n))
    outputs = np.empty(s_total + 1)
    rates = np.empty(s_total + 1)
    inputs = np.empty(s_total + 1)

    def record(i: int, fx, gx):
        ui = u.values[min(i // substeps, n_int - 1)]
        states[i] = x
        outputs[i] = pm.h(x)
        rates[i] = np.dot(pm.h_grad(x), fx + gx * ui)
        inputs[i] = ui

    fx = pm.f(x)
    gx = pm.g(x)
    record(0, fx, gx)
    for i in range(s_total):
        uk = u.values[i // substeps]
        k1 = fx + gx * uk
        xa = x + (0.5 * h) * k1
        k2 = pm.f(xa) + pm.g(xa) * uk
        xb = x + (0.5 * h) * k2
        k3 = pm.f(xb) + pm.g(xb) * uk
        xc = x + h * k3
        k4 = pm.f(xc) + pm.g(xc) * uk
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(float(times[i]))
        fx = pm.f(x)
        gx = pm.g(x)
        record(i + 1, fx, gx)
    return Trajectory(times, states, outputs, rates, inputs)


# Dormand-Prince 5(4) tableau.
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: weights of the embedded error estimate
_DP_ERR = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
_MIN_STEP = 1e-12
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _dopri_segment(rhs, x, t_lo, t_hi, rtol, atol, max_step):
    """Integrate one constant-input interval, returning accepted samples.

    Error control uses the standard mixed norm
    rms(err / (atol + rtol max(|x|, |x_new|))) <= 1. The final step is
    clipped so the segment ends exactly at t_hi.
    """
    accepted = []
    t = t_lo
    h = min(max_step, t_hi - t_lo)
    k = [None] * 7
    while t < t_hi:
        remaining = t_hi - t
        h = min(h, max_step)
        last = h >= remaining * (1.0 - 1e-12)
        if last:
            # a final sliver of roundoff size is legitimate, not stiffness
            h = remaining
        elif h < _MIN_STEP:
            raise StiffnessError(t, h)
        k[0] = rhs(x)
        for i in range(1, 7):
            xi = x + h * sum(aij * k[j] for j, aij in enumerate(_DP_A[i]))
            k[i] = rhs(xi)
        x_new = x + h * sum(b * k[i] for i, b in enumerate(_DP_B5) if b != 0.0)
        err = h * sum(e * k[i] for i, e in enumerate(_DP_ERR) if e != 0.0)
        if np.all(np.isfinite(x_new)) and np.all(np.isfinite(err)):
            scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
            enorm = float(np.sqrt(np.mean((err / scale) ** 2)))
        else:
            enorm = math.inf
        if enorm <= 1.0:
            t = t_hi if last else t + h
            x = x_new
            if not np.all(np.isfinite(x)):
                raise DivergenceError(t)
            accepted.append((t, x))
            if enorm == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * enorm ** -0.2))
            h = h * factor
        else:
            h = h * max(_MIN_FACTOR, _SAFETY * enorm ** -0.2)
    return x, accepted


def integrate_adaptive(
    pm: PlantModel,
    x0,
    t0: float,
    u: ControlSequence,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_step: float = 0.01,
) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) over the span of the control sequence.

    Integration is restarted at every control switch time; recorded samples
    are the start time, every accepted step, and every interval boundary.
    Raises :class:`StiffnessError` on step-size underflow (< 1e-12) and
    :class:`DivergenceError` on non-finite states.
    """
    if rtol <= 0.0 or atol <= 0.0 or max_step <= 0.0:
        raise ValueError("rtol, atol and max_step must be positive")
    _check_start(t0, u)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (pm.n,):
        raise ValueError(f"initial state must have shape ({pm.n},), got {x.shape}")

    n_int = u.n_intervals
    ts = [t0]
    xs = [x.copy()]
    level_idx = [0]
    for kk in range(n_int):
        lo = u.t_start + kk * u.step
        hi = u.t_start + (kk + 1) * u.step
        uk = float(u.values[kk])

        def rhs(z, _uk=uk):
            return pm.f(z) + pm.g(z) * _uk

        x, acc = _dopri_segment(rhs, x, lo, hi, rtol, atol, max_step)
        for ta, xa in acc:
            ts.append(ta)
            xs.append(xa)
            # samples at a switch time carry the next level
            level_idx.append(kk if ta < hi else min(kk + 1, n_int - 1))

    times = np.array(ts)
    states = np.vstack(xs)
    m = times.size
    outputs = np.empty(m)
    rates = np.empty(m)
    inputs = np.empty(m)
    for i in range(m):
        xi = states[i]
        ui = float(u.values[level_idx[i]])
        fx = pm.f(xi)
        gxu = pm.g(xi) * ui
        outputs[i] = pm.h(xi)
        rates[i] = np.dot(pm.h_grad(xi), fx + gxu)
        inputs[i] = ui
    return Trajectory(times, states, outputs, rates, inputs)


def concat_trajectories(segments) -> Trajectory:
    """Stitch contiguous segments into one trajectory.

    At a shared boundary time the later segment's sample wins, which keeps
    the stored inputs right continuous across control switches. Segments
    must hand over time and state exactly.
    """
    segments = list(segments)
    if not segments:
        raise ValueError("no segments to concatenate")
    for prev, nxt in zip(segments, segments[1:]):
        if abs(prev.times[-1] - nxt.times[0]) > 1e-12:
            raise ValueError("segments are not contiguous in time")
        if not np.array_equal(prev.states[-1], nxt.states[0]):
            raise ValueError("segments do not hand over the state exactly")
    if len(segments) == 1:
        return segments[0]
    times = np.concatenate([s.times[:-1] for s in segments[:-1]] + [segments[-1].times])
    states = np.concatenate([s.states[:-1] for s in segments[:-1]] + [segments[-1].states])
    outputs = np.concatenate([s.outputs[:-1] for s in segments[:-1]] + [segments[-1].outputs])
    rates = np.concatenate(
        [s.output_rates[:-1] for s in segments[:-1]] + [segments[-1].output_rates]
    )
    inputs = np.concatenate([s.inputs[:-1] for s in segments[:-1]] + [segments[-1].inputs])
    return Trajectory(times, states, outputs, rates, inputs)
