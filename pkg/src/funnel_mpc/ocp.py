"""Finite-horizon optimal control step.

Direct single shooting: the decision variable is the stack of
piecewise-constant control levels over the horizon, states come from
forward integration, and funnel constraints enter only through the
barrier stage cost. The hard input bound is enforced by projection
(componentwise clamp), so the solver is projected gradient descent with
forward finite-difference gradients and an Armijo backtracking line
search. Infeasible candidates are scored by the capped, graded penalty
from :func:`funnel_mpc.cost.running_cost`, which points back into the
funnel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import MAX_SAMPLE_SPACING, StageCostSpec, running_cost
from .funnel import eval_on_grid
from .plant import PlantModel
from .sim import ControlSequence, IntegrationError, Trajectory, integrate_fixed, integrate_adaptive

__all__ = [
    "SolverConfig",
    "SolverStats",
    "SolverError",
    "OcpProblem",
    "OcpSolution",
    "AdmissibilityResult",
    "solve_ocp",
    "admissible",
    "shift_warm_start",
]

ARMIJO_SHRINK = 0.5
ARMIJO_SLOPE = 1e-4
FD_STEP_SCALE = 1e-6
_MAX_BACKTRACKS = 40
_BACKTRACK_CHUNK = 8
#: Safeguard interval for the Barzilai-Borwein trial step.
_ALPHA_MIN = 1e-8
_ALPHA_MAX = 1e8


class SolverError(RuntimeError):
    """Raised when every candidate evaluation diverged."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget and stopping tolerances of the OCP solver."""

    max_iterations: int = 200
    grad_tol: float = 1e-6
    decrease_tol: float = 1e-9
    substeps: int = 4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.grad_tol <= 0.0 or self.decrease_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")


@dataclass(frozen=True)
class SolverStats:
    iterations: int
    cost_evaluations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class OcpProblem:
    """One receding-horizon subproblem.

    The horizon must be an integer number of control intervals; the bound
    is the box |u| <= bound on every level.
    """

    plant: PlantModel
    cost: StageCostSpec
    t_hat: float
    x_hat: np.ndarray
    horizon: float
    control_step: float
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float))
        if self.t_hat < 0.0:
            raise ValueError("t_hat must be nonnegative")
        if self.horizon <= 0.0 or self.control_step <= 0.0:
            raise ValueError("horizon and control_step must be positive")
        if self.bound <= 0.0:
            raise ValueError("bound must be positive")
        ratio = self.horizon / self.control_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("horizon must be an integer multiple of control_step")
        if self.x_hat.shape != (self.plant.n,):
            raise ValueError(f"x_hat must have shape ({self.plant.n},)")
        if not np.all(np.isfinite(self.x_hat)):
            raise ValueError("x_hat must be finite")

    @property
    def n_intervals(self) -> int:
        return int(round(self.horizon / self.control_step))


@dataclass(eq=False)
class OcpSolution:
    """Solver output.

    ``feasible`` mirrors the running cost of ``predicted``: True iff every
    prediction sample has finite stage cost. ``predicted`` is None only for
    solutions reloaded from disk.
    """

    controls: ControlSequence
    cost_value: float
    feasible: bool
    predicted: Optional[Trajectory]
    solver_stats: SolverStats


@dataclass(frozen=True)
class AdmissibilityResult:
    """Outcome of the strict admissibility predicate.

    ``margins`` are the minimum funnel margins over the horizon when
    admissible. ``reason`` is "bound", "funnel0", "funnel1" or an
    integration failure note otherwise.
    """

    admissible: bool
    margins: Optional[tuple]
    violation_t: Optional[float]
    reason: Optional[str] = None


class _ShootingObjective:
    """Running cost of the fixed-step prediction as a function of the levels.

    Evaluates whole batches of candidate level vectors in one vectorized
    pass when the plant supports batched states; otherwise falls back to
    one public-path integration per candidate. Both paths reproduce
    running_cost(integrate_fixed(...)) for the same levels. Candidates are
    evaluated without a bound check: finite-difference probes may poke past
    the box, and the projection keeps iterates inside it.
    """

    def __init__(self, problem: OcpProblem, substeps: int):
        self.problem = problem
        cost = problem.cost
        step = problem.control_step
        # keep the prediction sampling dense enough for the quadrature contract
        min_substeps = int(math.ceil(step / MAX_SAMPLE_SPACING - 1e-9))
        self.substeps = max(int(substeps), min_substeps, 1)
        self.n_levels = problem.n_intervals
        self.h = step / self.substeps
        s_total = self.n_levels * self.substeps
        self.times = problem.t_hat + self.h * np.arange(s_total + 1)
        self.level_idx = np.minimum(np.arange(s_total + 1) // self.substeps, self.n_levels - 1)
        self.yref0 = eval_on_grid(cost.reference.y_ref, self.times)
        self.yref1 = eval_on_grid(cost.reference.y_ref_dot, self.times)
        self.p0 = eval_on_grid(cost.funnels.psi0.value, self.times)
        self.p1 = eval_on_grid(cost.funnels.psi1.value, self.times)
        w = np.zeros(s_total + 1)
        d = np.diff(self.times)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        self.weights = w
        self.two_funnel = cost.uses_derivative_funnel
        self.evaluations = 0

    def evaluate(self, levels: np.ndarray):
        """Map levels of shape (B, N) or (N,) to (J, feasible, diverged)."""
        v = np.atleast_2d(np.asarray(levels, dtype=float))
        self.evaluations += v.shape[0]
        if self.problem.plant.vectorized:
            return self._evaluate_batch(v)
        return self._evaluate_loop(v)

    def _rollout_batch(self, v: np.ndarray):
        pm = self.problem.plant
        b = v.shape[0]
        h = self.h
        s_total = self.n_levels * self.substeps
        x = np.repeat(self.problem.x_hat[None, :], b, axis=0)
        y = np.empty((b, s_total + 1))
        yd = np.empty((b, s_total + 1))

        fx = pm.f(x)
        gx = pm.g(x)
        u_now = v[:, 0][:, None]
        y[:, 0] = pm.h(x)
        yd[:, 0] = np.sum(pm.h_grad(x) * (fx + gx * u_now), axis=1)
        for i in range(s_total):
            uk = v[:, i // self.substeps][:, None]
            k1 = fx + gx * uk
            xa = x + (0.5 * h) * k1
            k2 = pm.f(xa) + pm.g(xa) * uk
            xb = x + (0.5 * h) * k2
            k3 = pm.f(xb) + pm.g(xb) * uk
            xc = x + h * k3
            k4 = pm.f(xc) + pm.g(xc) * uk
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            ui = v[:, self.level_idx[i + 1]][:, None]
            fx = pm.f(x)
            gx = pm.g(x)
            y[:, i + 1] = pm.h(x)
            yd[:, i + 1] = np.sum(pm.h_grad(x) * (fx + gx * ui), axis=1)
        return y, yd

    def _evaluate_batch(self, v: np.ndarray):
        cost = self.problem.cost
        y, yd = self._rollout_batch(v)
        finite_rows = np.isfinite(y).all(axis=1) & np.isfinite(yd).all(axis=1)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            e0 = y - self.yref0
            bad0 = ~(np.abs(e0) < self.p0)
            barrier = 1.0 / (1.0 - (e0 / self.p0) ** 2)
            over_sq = np.where(
                bad0 & np.isfinite(e0), np.abs(e0) - self.p0, 0.0
            ) ** 2
            if self.two_funnel:
                e1 = yd - self.yref1
                bad1 = ~(np.abs(e1) < self.p1)
                barrier = barrier + 1.0 / (1.0 - (e1 / self.p1) ** 2)
                over_sq = over_sq + np.where(
                    bad1 & np.isfinite(e1), np.abs(e1) - self.p1, 0.0
                ) ** 2
                bad_any = bad0 | bad1
            else:
                bad_any = bad0
            u_samples = v[:, self.level_idx]
            ell = barrier + cost.lambda_u * u_samples * u_samples
            integral = ell @ self.weights
            penalty = cost.cap + cost.violation_weight * (over_sq @ self.weights)
        feasible = finite_rows & ~bad_any.any(axis=1)
        diverged = ~finite_rows
        j = np.where(feasible, integral, penalty)
        # diverged candidates can never win; give them a flat surcharge
        j = np.where(diverged, cost.cap + penalty, j)
        return j, feasible, diverged

    def _evaluate_loop(self, v: np.ndarray):
        problem = self.problem
        b = v.shape[0]
        j = np.empty(b)
        feasible = np.zeros(b, dtype=bool)
        diverged = np.zeros(b, dtype=bool)
        for i in range(b):
            seq = ControlSequence(problem.t_hat, problem.control_step, v[i], bound=math.inf)
            try:
                traj = integrate_fixed(problem.plant, problem.x_hat, problem.t_hat, seq, self.substeps)
            except IntegrationError:
                j[i] = 2.0 * problem.cost.cap
                diverged[i] = True
                continue
            rc = running_cost(problem.cost, traj)
            j[i] = rc.value
            feasible[i] = rc.feasible
        return j, feasible, diverged


def _fd_gradient(objective: _ShootingObjective, v: np.ndarray, j0: float, fd_step: float):
    probes = v[None, :] + fd_step * np.eye(v.size)
    jp, _, div = objective.evaluate(probes)
    return (jp - j0) / fd_step, bool(np.any(~div))


def _projected_descent(objective: _ShootingObjective, v0: np.ndarray, bound: float, solver: SolverConfig):
    """Run projected gradient descent from one initial iterate.

    The trial step follows the Barzilai-Borwein spectral rule (safeguarded
    to [_ALPHA_MIN, _ALPHA_MAX]) and is then reduced by Armijo backtracking
    along the projection arc. Returns (best levels, best cost, iterations,
    converged, any evaluation finished without divergence).
    """
    v = np.clip(np.asarray(v0, dtype=float), -bound, bound)
    j_arr, _, div = objective.evaluate(v)
    j = float(j_arr[0])
    any_ok = bool(~div[0])
    best_v, best_j = v.copy(), j
    fd_step = FD_STEP_SCALE * max(1.0, bound)
    iterations = 0
    converged = False
    prev_v: Optional[np.ndarray] = None
    prev_g: Optional[np.ndarray] = None
    for _ in range(solver.max_iterations):
        iterations += 1
        g, grad_ok = _fd_gradient(objective, v, j, fd_step)
        any_ok = any_ok or grad_ok
        pg = v - np.clip(v - g, -bound, bound)
        if float(np.linalg.norm(pg)) < solver.grad_tol:
            converged = True
            break
        if prev_g is None:
            alpha = 1.0 / max(float(np.max(np.abs(pg))), 1e-12)
        else:
            s = v - prev_v
            y = g - prev_g
            sy = float(np.dot(s, y))
            alpha = float(np.dot(s, s)) / sy if sy > 0.0 else _ALPHA_MAX
        alpha = float(np.clip(alpha, _ALPHA_MIN, _ALPHA_MAX))
        prev_v, prev_g = v.copy(), g
        # Armijo backtracking along the projection arc, in chunks
        accepted = None
        for start in range(0, _MAX_BACKTRACKS, _BACKTRACK_CHUNK):
            alphas = alpha * ARMIJO_SHRINK ** np.arange(start, min(start + _BACKTRACK_CHUNK, _MAX_BACKTRACKS))
            cands = np.clip(v[None, :] - alphas[:, None] * g[None, :], -bound, bound)
            jc, _, divc = objective.evaluate(cands)
            any_ok = any_ok or bool(np.any(~divc))
            for row in range(alphas.size):
                slope = float(np.dot(g, cands[row] - v))
                if jc[row] <= j + ARMIJO_SLOPE * slope:
                    accepted = (cands[row], float(jc[row]))
                    break
            if accepted is not None:
                break
        if accepted is None:
            # line search stalled; treat as converged at this iterate
            converged = True
            break
        decrease = j - accepted[1]
        v, j = accepted
        if j < best_j:
            best_v, best_j = v.copy(), j
        if decrease < solver.decrease_tol:
            converged = True
            break
    return best_v, best_j, iterations, converged, any_ok


def solve_ocp(
    problem: OcpProblem,
    warm_start: Optional[ControlSequence] = None,
    solver: SolverConfig = SolverConfig(),
) -> OcpSolution:
    """Solve one receding-horizon subproblem.

    Initial iterates are tried in order: the warm start (clamped to the
    box), then the zero sequence; the better final iterate wins. The
    returned cost and feasibility flag come from re-evaluating the final
    levels through the public prediction path, so they match
    running_cost(integrate_fixed(...)) exactly.
    """
    n = problem.n_intervals
    bound = problem.bound
    if warm_start is not None:
        if warm_start.n_intervals != n:
            raise ValueError("warm start has the wrong number of levels")
        if abs(warm_start.step - problem.control_step) > 1e-9:
            raise ValueError("warm start has the wrong control step")
    objective = _ShootingObjective(problem, solver.substeps)
    inits = []
    if warm_start is not None:
        inits.append(np.clip(warm_start.values, -bound, bound))
    inits.append(np.zeros(n))

    best = None
    total_iterations = 0
    any_ok = False
    for v0 in inits:
        v, j, iters, converged, ok = _projected_descent(objective, v0, bound, solver)
        total_iterations += iters
        any_ok = any_ok or ok
        if best is None or j < best[1]:
            best = (v, j, converged)
    if not any_ok:
        raise SolverError("every candidate evaluation diverged")

    controls = ControlSequence(
        problem.t_hat,
        problem.control_step,
        np.clip(best[0], -bound, bound),
        bound=bound,
    )
    predicted = integrate_fixed(
        problem.plant, problem.x_hat, problem.t_hat, controls, objective.substeps
    )
    rc = running_cost(problem.cost, predicted)
    stats = SolverStats(
        iterations=total_iterations,
        cost_evaluations=objective.evaluations,
        converged=best[2],
    )
    return OcpSolution(
        controls=controls,
        cost_value=rc.value,
        feasible=rc.feasible,
        predicted=predicted,
        solver_stats=stats,
    )


def admissible(
    problem: OcpProblem,
    u: ControlSequence,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_step: float = 0.01,
) -> AdmissibilityResult:
    """Strict admissibility of a control over the horizon.

    Requires |u_k| < bound strictly for every level (the box in the OCP is
    closed, this predicate is the open one) and strict funnel membership of
    both error coordinates at every sample of the adaptive reference
    integration.
    """
    if abs(u.t_start - problem.t_hat) > 1e-9 or abs(u.span - problem.horizon) > 1e-9:
        raise ValueError("control sequence must span [t_hat, t_hat + horizon]")
    over = np.flatnonzero(~(np.abs(u.values) < problem.bound))
    if over.size:
        k = int(over[0])
        return AdmissibilityResult(
            admissible=False,
            margins=None,
            violation_t=float(u.t_start + k * u.step),
            reason="bound",
        )
    try:
        traj = integrate_adaptive(
            problem.plant, problem.x_hat, problem.t_hat, u, rtol=rtol, atol=atol, max_step=max_step
        )
    except IntegrationError as exc:
        t_fail = getattr(exc, "last_time", getattr(exc, "time", problem.t_hat))
        return AdmissibilityResult(
            admissible=False,
            margins=None,
            violation_t=float(t_fail),
            reason=f"integration: {exc}",
        )
    cost = problem.cost
    e0 = traj.outputs - eval_on_grid(cost.reference.y_ref, traj.times)
    e1 = traj.output_rates - eval_on_grid(cost.reference.y_ref_dot, traj.times)
    p0 = eval_on_grid(cost.funnels.psi0.value, traj.times)
    p1 = eval_on_grid(cost.funnels.psi1.value, traj.times)
    m0 = p0 - np.abs(e0)
    m1 = p1 - np.abs(e1)
    bad = np.flatnonzero((m0 <= 0.0) | (m1 <= 0.0))
    if bad.size:
        i = int(bad[0])
        which = 0 if m0[i] <= 0.0 else 1
        return AdmissibilityResult(
            admissible=False,
            margins=None,
            violation_t=float(traj.times[i]),
            reason=f"funnel{which}",
        )
    return AdmissibilityResult(
        admissible=True,
        margins=(float(m0.min()), float(m1.min())),
        violation_t=None,
    )


def shift_warm_start(prev: ControlSequence, shift_intervals: int) -> ControlSequence:
    """Advance a solution by whole intervals for the next subproblem.

    Drops the first ``shift_intervals`` levels, repeats the last level to
    restore the length, and moves t_start forward accordingly.
    """
    n = prev.n_intervals
    if not 0 <= shift_intervals < n:
        raise ValueError("shift must satisfy 0 <= shift < number of levels")
    if shift_intervals == 0:
        values = prev.values.copy()
    else:
        values = np.concatenate(
            [prev.values[shift_intervals:], np.full(shift_intervals, prev.values[-1])]
        )
    return ControlSequence(
        t_start=prev.t_start + shift_intervals * prev.step,
        step=prev.step,
        values=values,
        bound=prev.bound,
    )
