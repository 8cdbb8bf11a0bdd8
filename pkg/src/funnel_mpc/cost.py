"""Barrier stage costs and their integrals along trajectories.

The stage cost puts a reciprocal barrier on the squared ratio of each
error coordinate to its funnel radius: 1 / (1 - e^2 / psi^2), which is 1
at zero error and grows without bound as |e| approaches psi. On or past
the boundary the cost is infinite by definition. A quadratic input
penalty lambda_u u^2 is added. The two_funnel scheme penalizes both the
error and its derivative; the one_funnel variant keeps only the position
barrier and ignores the derivative funnel entirely, including in its
feasibility classification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .funnel import FunnelPair
from .plant import ReferenceSignal
from .sim import Trajectory

__all__ = [
    "SCHEMES",
    "StageCostSpec",
    "StageCostValue",
    "RunningCost",
    "stage_cost",
    "running_cost",
]

SCHEMES = ("two_funnel", "one_funnel")

#: Quadrature samples must be at least this dense (seconds).
MAX_SAMPLE_SPACING = 0.01


@dataclass(frozen=True)
class StageCostSpec:
    """Stage cost parameters.

    ``cap`` and ``violation_weight`` only matter for the optimizer's
    infeasibility surrogate in :func:`running_cost`; the pointwise stage
    cost itself is exact.
    """

    scheme: str
    funnels: FunnelPair
    lambda_u: float
    reference: ReferenceSignal
    cap: float = 1e8
    violation_weight: float = 1e6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got '{self.scheme}'")
        if self.lambda_u < 0.0:
            raise ValueError("lambda_u must be nonnegative")
        if self.cap <= 0.0 or self.violation_weight <= 0.0:
            raise ValueError("cap and violation_weight must be positive")

    @property
    def uses_derivative_funnel(self) -> bool:
        return self.scheme == "two_funnel"


@dataclass(frozen=True)
class StageCostValue:
    """Pointwise stage cost: finite value, or the funnel overshoots.

    ``overshoots`` holds max(0, |e_i| - psi_i) per coordinate; coordinates
    outside the scheme contribute zero. A boundary hit (|e| = psi) is
    infinite with zero overshoot.
    """

    finite: bool
    value: Optional[float]
    overshoots: tuple


@dataclass(frozen=True)
class RunningCost:
    """Integrated stage cost of a trajectory.

    ``value`` is the trapezoidal integral when feasible, and the capped,
    graded penalty cap + violation_weight * sum(overshoot^2 * weight)
    otherwise. The penalty always exceeds the cap, and deeper or longer
    funnel violations cost more, which hands the optimizer a descent
    direction back into the funnel.
    """

    feasible: bool
    value: float
    first_violation_t: Optional[float]


def stage_cost(spec: StageCostSpec, t: float, zeta0: float, zeta1: float, u: float) -> StageCostValue:
    """Stage cost at time t for output value zeta0 and output rate zeta1."""
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got {t}")
    e0 = float(zeta0) - float(spec.reference.y_ref(t))
    p0 = float(spec.funnels.psi0.value(t))
    finite = abs(e0) < p0
    over0 = 0.0 if finite else abs(e0) - p0
    over1 = 0.0
    barrier = 0.0
    if finite:
        barrier = 1.0 / (1.0 - (e0 / p0) ** 2)
    if spec.uses_derivative_funnel:
        e1 = float(zeta1) - float(spec.reference.y_ref_dot(t))
        p1 = float(spec.funnels.psi1.value(t))
        if abs(e1) < p1:
            if finite:
                barrier = barrier + 1.0 / (1.0 - (e1 / p1) ** 2)
        else:
            finite = False
            over1 = abs(e1) - p1
    if not finite:
        return StageCostValue(finite=False, value=None, overshoots=(over0, over1))
    return StageCostValue(
        finite=True,
        value=barrier + spec.lambda_u * float(u) * float(u),
        overshoots=(0.0, 0.0),
    )


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros(times.size)
    if times.size > 1:
        d = np.diff(times)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
    return w


def running_cost(spec: StageCostSpec, traj: Trajectory) -> RunningCost:
    """Trapezoidal quadrature of the stage cost over trajectory samples.

    Requires sample spacing of at most 0.01 s so the quadrature cannot skip
    over funnel crossings. If any sample is infinite the result is the
    graded penalty described on :class:`RunningCost`.
    """
    n = traj.n_samples
    if n < 1:
        raise ValueError("trajectory is empty")
    if n > 1 and traj.max_spacing() > MAX_SAMPLE_SPACING * (1.0 + 1e-9):
        raise ValueError(
            f"sample spacing {traj.max_spacing():.4g} exceeds {MAX_SAMPLE_SPACING} s"
        )
    w = _trapezoid_weights(traj.times)
    vals = np.zeros(n)
    over_sq = np.zeros(n)
    feasible = True
    first_violation = None
    for i in range(n):
        sc = stage_cost(spec, float(traj.times[i]), traj.outputs[i], traj.output_rates[i], traj.inputs[i])
        if sc.finite:
            vals[i] = sc.value
        else:
            if feasible:
                feasible = False
                first_violation = float(traj.times[i])
            o0, o1 = sc.overshoots
            over_sq[i] = o0 * o0 + o1 * o1
    if feasible:
        return RunningCost(feasible=True, value=float(np.dot(vals, w)), first_violation_t=None)
    penalty = spec.cap + spec.violation_weight * float(np.dot(over_sq, w))
    return RunningCost(feasible=False, value=penalty, first_violation_t=first_violation)
