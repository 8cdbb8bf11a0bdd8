"""Receding-horizon closed loop.

From the current state, solve the finite-horizon problem, apply the first
control level for one shift interval with the adaptive integrator, hand
the exact final state to the next step, and repeat until the end time.
Warm starts are the previous solution shifted by one interval. A step
whose subproblem only admits a penalized (infeasible) solution is flagged
but the loop continues with that solution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .cost import StageCostSpec
from .funnel import FunnelCheck, FunnelPair, eval_on_grid, in_funnel, sampling_grid, validate_g1
from .ocp import OcpProblem, OcpSolution, SolverConfig, SolverError, admissible, shift_warm_start, solve_ocp
from .plant import PlantModel, ReferenceSignal, output_and_derivative
from .sim import (
    ControlSequence,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    concat_trajectories,
    integrate_adaptive,
)

__all__ = [
    "FmpcConfig",
    "StepRecord",
    "ClosedLoopRun",
    "AuditViolation",
    "AuditReport",
    "check_initial_feasibility",
    "run_fmpc",
    "audit_recursive_feasibility",
]


@dataclass(frozen=True, eq=False)
class FmpcConfig:
    """Closed-loop controller configuration.

    ``horizon`` is the prediction span, ``shift`` both the control interval
    and the receding-horizon advance, ``bound`` the input box. The horizon
    must be an integer multiple (>= 2) of the shift.
    """

    horizon: float
    shift: float
    bound: float
    lambda_u: float
    scheme: str
    t0: float
    x0: np.ndarray
    t_end: float
    solver: SolverConfig = SolverConfig()
    integrator: IntegratorConfig = IntegratorConfig()
    cap: float = 1e8
    violation_weight: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.shift <= 0.0:
            raise ValueError("shift must be positive")
        if self.horizon <= self.shift:
            raise ValueError("horizon must exceed shift")
        ratio = self.horizon / self.shift
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("horizon not a multiple of shift")
        if self.bound <= 0.0:
            raise ValueError("bound must be positive")
        if self.lambda_u < 0.0:
            raise ValueError("lambda_u must be nonnegative")
        if self.t0 < 0.0:
            raise ValueError("t0 must be nonnegative")
        if self.t_end < self.t0:
            raise ValueError("t_end must not precede t0")

    def n_steps(self) -> int:
        """Number of receding-horizon steps needed to reach t_end."""
        q = (self.t_end - self.t0) / self.shift
        return max(0, int(math.ceil(q - 1e-9)))


@dataclass(eq=False)
class StepRecord:
    """One receding-horizon step: solve at (t_hat, x_hat), apply one level."""

    index: int
    t_hat: float
    x_hat: np.ndarray
    solution: OcpSolution
    wall_time: float
    margins: tuple
    applied_inside: bool


@dataclass(eq=False)
class ClosedLoopRun:
    """Full closed-loop result.

    ``funnel_margins`` lists the minimal (position, rate) funnel margins
    over each applied segment. ``feasible_throughout`` requires every
    subproblem to have a finite-cost solution and every applied segment to
    stay strictly inside both funnels. ``error`` carries an abort note if
    the run ended early; the trajectory is then partial.
    """

    trajectory: Optional[Trajectory]
    per_step: List[StepRecord]
    funnel_margins: List[tuple]
    feasible_throughout: bool
    cost_spec: StageCostSpec
    error: Optional[str] = None


@dataclass(frozen=True)
class AuditViolation:
    step_index: int
    t_hat: float
    reason: str


@dataclass(frozen=True)
class AuditReport:
    steps_audited: int
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def check_initial_feasibility(
    funnels: FunnelPair,
    ref: ReferenceSignal,
    pm: PlantModel,
    t0: float,
    x0,
) -> FunnelCheck:
    """Strict funnel membership of the initial error pair.

    The output rate of a relative-degree-two plant does not depend on the
    input, so it is evaluated with u = 0.
    """
    y, ydot = output_and_derivative(pm, x0, 0.0)
    e0 = y - float(ref.y_ref(t0))
    e1 = ydot - float(ref.y_ref_dot(t0))
    return in_funnel(funnels, t0, e0, e1)


def _segment_margins(spec: StageCostSpec, seg: Trajectory) -> tuple:
    """Minimum funnel margins over a segment and strict containment flag."""
    e0 = seg.outputs - eval_on_grid(spec.reference.y_ref, seg.times)
    e1 = seg.output_rates - eval_on_grid(spec.reference.y_ref_dot, seg.times)
    m0 = eval_on_grid(spec.funnels.psi0.value, seg.times) - np.abs(e0)
    m1 = eval_on_grid(spec.funnels.psi1.value, seg.times) - np.abs(e1)
    inside = bool(np.all(m0 > 0.0) and np.all(m1 > 0.0))
    return (float(m0.min()), float(m1.min())), inside


def _initial_sample(pm: PlantModel, t0: float, x0: np.ndarray) -> Trajectory:
    y, ydot = output_and_derivative(pm, x0, 0.0)
    return Trajectory(
        times=np.array([t0]),
        states=x0[None, :].copy(),
        outputs=np.array([y]),
        output_rates=np.array([ydot]),
        inputs=np.array([0.0]),
    )


def run_fmpc(
    cfg: FmpcConfig,
    pm: PlantModel,
    funnels: FunnelPair,
    ref: ReferenceSignal,
) -> ClosedLoopRun:
    """Run the receding-horizon loop from t0 until t_end is reached.

    The funnel pair must pass the compatibility check (it is validated here
    over the experiment span if not validated yet) and the initial error
    pair must lie strictly inside both funnels; violations raise
    ValueError. Integrator or solver failures abort the run and return the
    partial result with an error note.
    """
    if funnels.epsilon is None:
        grid_end = cfg.t_end + cfg.horizon
        grid = sampling_grid(grid_end, t_start=cfg.t0) if grid_end > cfg.t0 else None
        if grid is not None:
            res = validate_g1(funnels, grid)
            if not res.ok:
                raise ValueError(f"funnel pair rejected: {res.reason}")
    init = check_initial_feasibility(funnels, ref, pm, cfg.t0, cfg.x0)
    if not init.inside:
        raise ValueError(
            f"initial error is outside funnel {init.failed} "
            f"(margins {init.margins[0]:.4g}, {init.margins[1]:.4g})"
        )
    spec = StageCostSpec(
        scheme=cfg.scheme,
        funnels=funnels,
        lambda_u=cfg.lambda_u,
        reference=ref,
        cap=cfg.cap,
        violation_weight=cfg.violation_weight,
    )

    x = cfg.x0.copy()
    per_step: List[StepRecord] = []
    segments: List[Trajectory] = []
    prev: Optional[OcpSolution] = None
    error: Optional[str] = None
    n_steps = cfg.n_steps()
    for j in range(n_steps):
        t_hat = cfg.t0 + j * cfg.shift
        problem = OcpProblem(
            plant=pm,
            cost=spec,
            t_hat=t_hat,
            x_hat=x,
            horizon=cfg.horizon,
            control_step=cfg.shift,
            bound=cfg.bound,
        )
        warm = shift_warm_start(prev.controls, 1) if prev is not None else None
        started = time.perf_counter()
        try:
            sol = solve_ocp(problem, warm_start=warm, solver=cfg.solver)
        except SolverError as exc:
            error = f"solver failed at step {j} (t={t_hat:.4g}): {exc}"
            break
        wall = time.perf_counter() - started
        applied = ControlSequence(
            t_hat, cfg.shift, np.array([sol.controls.values[0]]), bound=cfg.bound
        )
        try:
            seg = integrate_adaptive(
                pm,
                x,
                t_hat,
                applied,
                rtol=cfg.integrator.rtol,
                atol=cfg.integrator.atol,
                max_step=cfg.integrator.max_step,
            )
        except IntegrationError as exc:
            error = f"integration failed at step {j} (t={t_hat:.4g}): {exc}"
            break
        margins, inside = _segment_margins(spec, seg)
        per_step.append(
            StepRecord(
                index=j,
                t_hat=t_hat,
                x_hat=x.copy(),
                solution=sol,
                wall_time=wall,
                margins=margins,
                applied_inside=inside,
            )
        )
        segments.append(seg)
        x = seg.states[-1].copy()
        prev = sol

    trajectory = concat_trajectories(segments) if segments else _initial_sample(pm, cfg.t0, cfg.x0)
    feasible = error is None and all(
        rec.solution.feasible and rec.applied_inside for rec in per_step
    )
    return ClosedLoopRun(
        trajectory=trajectory,
        per_step=per_step,
        funnel_margins=[rec.margins for rec in per_step],
        feasible_throughout=feasible,
        cost_spec=spec,
        error=error,
    )


def audit_recursive_feasibility(run: ClosedLoopRun, problem_template: OcpProblem) -> AuditReport:
    """Re-check every stored step of a run.

    For each step, the stored solution must have had finite cost and its
    full control sequence must be strictly admissible (open input bound,
    strict funnel membership along the adaptive re-integration) from the
    stored state. The template supplies plant, cost and horizon geometry;
    t_hat and x_hat are substituted per step.
    """
    violations = []
    for rec in run.per_step:
        problem = replace(problem_template, t_hat=rec.t_hat, x_hat=rec.x_hat)
        if not rec.solution.feasible:
            violations.append(
                AuditViolation(rec.index, rec.t_hat, "solution cost was penalized (infeasible)")
            )
            continue
        res = admissible(problem, rec.solution.controls)
        if not res.admissible:
            violations.append(
                AuditViolation(
                    rec.index,
                    rec.t_hat,
                    f"not admissible: {res.reason} at t={res.violation_t:.6g}",
                )
            )
    return AuditReport(steps_audited=len(run.per_step), violations=tuple(violations))
