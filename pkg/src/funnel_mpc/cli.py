"""Command line interface.

Subcommands:

* ``run``      execute the configured schemes and write CSV + JSON artifacts
* ``validate`` check a config without running anything
* ``audit``    re-check recursive feasibility of a finished run directory

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ConfigValidationError, ExperimentConfig, from_dict, load_config, save_config
from .cost import StageCostSpec, stage_cost
from .funnel import sampling_grid, validate_g0, validate_g1
from .mpc import (
    ClosedLoopRun,
    StepRecord,
    audit_recursive_feasibility,
    check_initial_feasibility,
    run_fmpc,
)
from .ocp import OcpProblem, OcpSolution, SolverStats
from .plant import lie_relative_degree_check
from .sim import ControlSequence

__all__ = ["main", "run_experiment", "emit_csv"]

CSV_HEADER = "t,y,y_ref,e,psi0,ydot,yref_dot,edot,psi1,u,stage_cost,feasible_step"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def emit_csv(run: ClosedLoopRun, path) -> None:
    """Write one row per trajectory sample with 17 significant digits.

    ``stage_cost`` is evaluated under the run's own scheme; samples on or
    past a funnel boundary print ``inf``. ``feasible_step`` is 1 when the
    step that produced the sample had a finite-cost solution.
    """
    spec = run.cost_spec
    traj = run.trajectory
    flags = [rec.solution.feasible for rec in run.per_step]
    t0 = run.per_step[0].t_hat if run.per_step else traj.times[0]
    shift = None
    if run.per_step:
        shift = run.per_step[0].solution.controls.step

    def step_flag(t: float) -> int:
        if not flags:
            return 1
        idx = int((t - t0) / shift)
        idx = min(max(idx, 0), len(flags) - 1)
        return int(flags[idx])

    lines = [CSV_HEADER]
    for i in range(traj.n_samples):
        t = float(traj.times[i])
        y = float(traj.outputs[i])
        ydot = float(traj.output_rates[i])
        u = float(traj.inputs[i])
        yr = float(spec.reference.y_ref(t))
        yrd = float(spec.reference.y_ref_dot(t))
        p0 = float(spec.funnels.psi0.value(t))
        p1 = float(spec.funnels.psi1.value(t))
        sc = stage_cost(spec, t, y, ydot, u)
        sc_val = sc.value if sc.finite else float("inf")
        lines.append(
            ",".join(
                [
                    _fmt(t),
                    _fmt(y),
                    _fmt(yr),
                    _fmt(y - yr),
                    _fmt(p0),
                    _fmt(ydot),
                    _fmt(yrd),
                    _fmt(ydot - yrd),
                    _fmt(p1),
                    _fmt(u),
                    _fmt(sc_val),
                    str(step_flag(t)),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _steps_payload(run: ClosedLoopRun) -> list:
    out = []
    for rec in run.per_step:
        sol = rec.solution
        out.append(
            {
                "index": rec.index,
                "t_hat": rec.t_hat,
                "x_hat": [float(v) for v in rec.x_hat],
                "controls": {
                    "t_start": sol.controls.t_start,
                    "step": sol.controls.step,
                    "values": [float(v) for v in sol.controls.values],
                    "bound": sol.controls.bound,
                },
                "cost_value": sol.cost_value,
                "feasible": bool(sol.feasible),
                "solver_stats": {
                    "iterations": sol.solver_stats.iterations,
                    "cost_evaluations": sol.solver_stats.cost_evaluations,
                    "converged": bool(sol.solver_stats.converged),
                },
                "wall_time": rec.wall_time,
                "margins": [float(rec.margins[0]), float(rec.margins[1])],
                "applied_inside": bool(rec.applied_inside),
            }
        )
    return out


def _summarize(run: ClosedLoopRun, wall_time: float) -> dict:
    traj = run.trajectory
    spec = run.cost_spec
    ts = traj.times
    e0 = traj.outputs - np.array([float(spec.reference.y_ref(t)) for t in ts])
    e1 = traj.output_rates - np.array([float(spec.reference.y_ref_dot(t)) for t in ts])
    p0 = np.array([float(spec.funnels.psi0.value(t)) for t in ts])
    p1 = np.array([float(spec.funnels.psi1.value(t)) for t in ts])
    return {
        "scheme": spec.scheme,
        "steps": len(run.per_step),
        "samples": traj.n_samples,
        "feasible_throughout": bool(run.feasible_throughout),
        "error": run.error,
        "max_abs_error": float(np.max(np.abs(e0))),
        "max_abs_error_rate": float(np.max(np.abs(e1))),
        "min_margin_position": float(np.min(p0 - np.abs(e0))),
        "min_margin_rate": float(np.min(p1 - np.abs(e1))),
        "position_funnel_violations": int(np.count_nonzero(np.abs(e0) >= p0)),
        "rate_funnel_violations": int(np.count_nonzero(np.abs(e1) >= p1)),
        "max_abs_u": float(np.max(np.abs(traj.inputs))),
        "control_range": [float(traj.inputs.min()), float(traj.inputs.max())],
        "infeasible_steps": [rec.index for rec in run.per_step if not rec.solution.feasible],
        "wall_time": wall_time,
    }


def run_experiment(cfg: ExperimentConfig, output_dir: Optional[str] = None) -> int:
    """Run every configured scheme and write artifacts to the output directory.

    Artifacts: config.json (resolved copy), <scheme>.csv,
    <scheme>_steps.json and summary.json. Funnel violations during a run do
    not change the exit status; only validation errors (1) or runtime
    failures (2) do.
    """
    if not cfg.schemes:
        print("nothing to run: scheme list is empty", file=sys.stderr)
        return 1
    try:
        pm = cfg.build_plant()
        funnels = cfg.build_funnels()
        ref = cfg.build_reference()
    except ValueError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 1

    grid = sampling_grid(cfg.t_end + cfg.horizon, t_start=cfg.t0)
    g1 = validate_g1(funnels, grid)
    if not g1.ok:
        print(f"validation failed: {g1.reason}", file=sys.stderr)
        return 1
    init = check_initial_feasibility(funnels, ref, pm, cfg.t0, np.asarray(cfg.x0, dtype=float))
    if not init.inside:
        print(
            f"validation failed: initial error outside funnel {init.failed} "
            f"(margins {init.margins[0]:.4g}, {init.margins[1]:.4g})",
            file=sys.stderr,
        )
        return 1

    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")

    status = 0
    summaries = {}
    for scheme in cfg.schemes:
        started = time.perf_counter()
        try:
            run = run_fmpc(cfg.fmpc_config(scheme), pm, funnels, ref)
        except Exception as exc:  # noqa: BLE001 - report and keep going
            print(f"{scheme}: run failed: {exc}", file=sys.stderr)
            summaries[scheme] = {"scheme": scheme, "error": str(exc)}
            status = 2
            continue
        wall = time.perf_counter() - started
        if run.error is not None:
            status = 2
        emit_csv(run, out / f"{scheme}.csv")
        (out / f"{scheme}_steps.json").write_text(json.dumps(_steps_payload(run), indent=1) + "\n")
        summary = _summarize(run, wall)
        summaries[scheme] = summary
        print(
            f"{scheme}: {summary['steps']} steps, "
            f"feasible_throughout={summary['feasible_throughout']}, "
            f"max|u|={summary['max_abs_u']:.4g}, "
            f"min margins ({summary['min_margin_position']:.4g}, "
            f"{summary['min_margin_rate']:.4g}), {wall:.1f}s"
        )
    (out / "summary.json").write_text(json.dumps(summaries, indent=2) + "\n")
    print(f"artifacts written to {out}")
    return status


def _load_run_records(run_dir: Path, scheme: str, cfg: ExperimentConfig) -> ClosedLoopRun:
    """Rebuild a steps-only view of a stored run for auditing."""
    payload = json.loads((run_dir / f"{scheme}_steps.json").read_text())
    funnels = cfg.build_funnels()
    validate_g1(funnels, sampling_grid(cfg.t_end + cfg.horizon, t_start=cfg.t0))
    spec = StageCostSpec(
        scheme=scheme,
        funnels=funnels,
        lambda_u=cfg.lambda_u,
        reference=cfg.build_reference(),
        cap=cfg.cap,
        violation_weight=cfg.violation_weight,
    )
    records = []
    for item in payload:
        controls = ControlSequence(
            t_start=item["controls"]["t_start"],
            step=item["controls"]["step"],
            values=np.array(item["controls"]["values"]),
            bound=item["controls"]["bound"],
        )
        stats = SolverStats(
            iterations=item["solver_stats"]["iterations"],
            cost_evaluations=item["solver_stats"]["cost_evaluations"],
            converged=item["solver_stats"]["converged"],
        )
        sol = OcpSolution(
            controls=controls,
            cost_value=item["cost_value"],
            feasible=item["feasible"],
            predicted=None,
            solver_stats=stats,
        )
        records.append(
            StepRecord(
                index=item["index"],
                t_hat=item["t_hat"],
                x_hat=np.array(item["x_hat"]),
                solution=sol,
                wall_time=item["wall_time"],
                margins=tuple(item["margins"]),
                applied_inside=item["applied_inside"],
            )
        )
    return ClosedLoopRun(
        trajectory=None,
        per_step=records,
        funnel_margins=[rec.margins for rec in records],
        feasible_throughout=all(r.solution.feasible and r.applied_inside for r in records),
        cost_spec=spec,
    )


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigValidationError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    overrides = {}
    if args.t_end is not None:
        overrides["t_end"] = args.t_end
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.shift is not None:
        overrides["shift"] = args.shift
    if args.bound is not None:
        overrides["bound"] = args.bound
    if args.scheme is not None:
        overrides["schemes"] = (
            list(args.scheme.split(",")) if args.scheme != "both" else ["two_funnel", "one_funnel"]
        )
    if overrides:
        raw = cfg.to_dict()
        for key, value in overrides.items():
            if key == "schemes":
                raw["controller"]["schemes"] = value
            else:
                raw["controller"][key] = value
        try:
            cfg = from_dict(raw)
        except ConfigValidationError as exc:
            for e in exc.errors:
                print(f"config error: {e}", file=sys.stderr)
            return 1
    try:
        return run_experiment(cfg, output_dir=args.output)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigValidationError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    pm = cfg.build_plant()
    funnels = cfg.build_funnels()
    ref = cfg.build_reference()
    ok = True

    grid = sampling_grid(cfg.t_end + cfg.horizon, t_start=cfg.t0)
    for label, b in (("psi0", funnels.psi0), ("psi1", funnels.psi1)):
        res = validate_g0(b, grid)
        if res.ok:
            print(f"{label}: positive, sampled infimum {res.inf_value:.6g}")
        else:
            print(f"{label}: NOT positive at t={res.violation_t:.6g}")
            ok = False
    g1 = validate_g1(funnels, grid)
    if g1.ok:
        print(f"funnel pair: compatible, epsilon {g1.best_epsilon:.6g}")
    else:
        print(f"funnel pair: INCOMPATIBLE ({g1.reason})")
        ok = False

    rng = np.random.default_rng(cfg.seed)
    states = rng.uniform(-10.0, 10.0, size=(100, pm.n))
    rd = lie_relative_degree_check(pm, states)
    if rd.confirmed:
        print(f"relative degree two confirmed, input gain in [{rd.gain_min:.6g}, {rd.gain_max:.6g}]")
    else:
        print(f"relative degree two NOT confirmed: {rd.reason}")
        ok = False

    init = check_initial_feasibility(funnels, ref, pm, cfg.t0, np.asarray(cfg.x0, dtype=float))
    if init.inside:
        print(f"initial error inside funnels, margins ({init.margins[0]:.6g}, {init.margins[1]:.6g})")
    else:
        print(f"initial error OUTSIDE funnel {init.failed}, margins "
              f"({init.margins[0]:.6g}, {init.margins[1]:.6g})")
        ok = False
    return 0 if ok else 1


def _cmd_audit(args) -> int:
    run_dir = Path(args.run)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        print(f"no config.json in {run_dir}", file=sys.stderr)
        return 2
    try:
        cfg = load_config(cfg_path)
    except ConfigValidationError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    pm = cfg.build_plant()
    any_violation = False
    audited_any = False
    for scheme in cfg.schemes:
        steps_path = run_dir / f"{scheme}_steps.json"
        if not steps_path.exists():
            continue
        audited_any = True
        run = _load_run_records(run_dir, scheme, cfg)
        template = OcpProblem(
            plant=pm,
            cost=run.cost_spec,
            t_hat=cfg.t0,
            x_hat=np.asarray(cfg.x0, dtype=float),
            horizon=cfg.horizon,
            control_step=cfg.shift,
            bound=cfg.bound,
        )
        report = audit_recursive_feasibility(run, template)
        print(f"{scheme}: audited {report.steps_audited} steps, "
              f"{len(report.violations)} violation(s)")
        for v in report.violations:
            print(f"  step {v.step_index} (t={v.t_hat:.4g}): {v.reason}")
        any_violation = any_violation or bool(report.violations)
    if not audited_any:
        print(f"no step logs found in {run_dir}", file=sys.stderr)
        return 2
    return 1 if any_violation else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="funnel-mpc",
        description="Funnel MPC benchmark runner (barrier stage costs, receding horizon).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured schemes")
    p_run.add_argument("--config", required=True, help="config file path or bundled name")
    p_run.add_argument("--output", default=None, help="output directory (overrides config)")
    p_run.add_argument(
        "--scheme",
        default=None,
        help="two_funnel, one_funnel, a comma list, or 'both' (overrides config)",
    )
    p_run.add_argument("--t-end", type=float, default=None, help="override experiment end time")
    p_run.add_argument("--horizon", type=float, default=None, help="override prediction horizon")
    p_run.add_argument("--shift", type=float, default=None, help="override control interval")
    p_run.add_argument("--bound", type=float, default=None, help="override input bound")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("--config", required=True, help="config file path or bundled name")
    p_val.set_defaults(func=_cmd_validate)

    p_audit = sub.add_parser("audit", help="re-check recursive feasibility of a run directory")
    p_audit.add_argument("--run", required=True, help="run directory with config.json and step logs")
    p_audit.set_defaults(func=_cmd_audit)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
