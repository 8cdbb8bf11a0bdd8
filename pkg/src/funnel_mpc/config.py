"""Experiment configuration.

One JSON document with sections plant, funnels, reference, controller,
solver and output describes a benchmark run. Validation collects every
error instead of stopping at the first one, so a broken config can be
fixed in one pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cost import SCHEMES
from .funnel import BoundaryFunction, FunnelPair
from .mpc import FmpcConfig
from .ocp import SolverConfig
from .plant import PlantModel, ReferenceSignal, available_references, build_plant, build_reference
from .sim import IntegratorConfig

__all__ = [
    "ExperimentConfig",
    "ConfigValidationError",
    "from_dict",
    "load_config",
    "save_config",
    "bundled_config_path",
    "resolve_config_path",
]

_FUNNEL_KINDS = ("exponential", "constant")


class ConfigValidationError(ValueError):
    """Carries the full list of validation errors for a config document."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    plant_name: str
    plant_params: dict
    psi0: dict
    psi1: dict
    reference: str
    horizon: float
    shift: float
    bound: float
    lambda_u: float
    t0: float
    x0: list
    t_end: float
    schemes: list
    max_iterations: int = 200
    grad_tol: float = 1e-6
    decrease_tol: float = 1e-9
    substeps: int = 4
    cap: float = 1e8
    violation_weight: float = 1e6
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 0.01
    seed: int = 0
    output_dir: str = "runs/out"

    def build_plant(self) -> PlantModel:
        return build_plant(self.plant_name, self.plant_params)

    def build_funnels(self) -> FunnelPair:
        return FunnelPair(psi0=_build_boundary(self.psi0), psi1=_build_boundary(self.psi1))

    def build_reference(self) -> ReferenceSignal:
        return build_reference(self.reference)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=self.max_iterations,
            grad_tol=self.grad_tol,
            decrease_tol=self.decrease_tol,
            substeps=self.substeps,
        )

    def integrator_config(self) -> IntegratorConfig:
        return IntegratorConfig(rtol=self.rtol, atol=self.atol, max_step=self.max_step)

    def fmpc_config(self, scheme: str) -> FmpcConfig:
        return FmpcConfig(
            horizon=self.horizon,
            shift=self.shift,
            bound=self.bound,
            lambda_u=self.lambda_u,
            scheme=scheme,
            t0=self.t0,
            x0=np.asarray(self.x0, dtype=float),
            t_end=self.t_end,
            solver=self.solver_config(),
            integrator=self.integrator_config(),
            cap=self.cap,
            violation_weight=self.violation_weight,
        )

    def to_dict(self) -> dict:
        return {
            "plant": {"name": self.plant_name, "params": dict(self.plant_params)},
            "funnels": {"psi0": dict(self.psi0), "psi1": dict(self.psi1)},
            "reference": self.reference,
            "controller": {
                "horizon": self.horizon,
                "shift": self.shift,
                "bound": self.bound,
                "lambda_u": self.lambda_u,
                "t0": self.t0,
                "x0": list(self.x0),
                "t_end": self.t_end,
                "schemes": list(self.schemes),
            },
            "solver": {
                "max_iterations": self.max_iterations,
                "grad_tol": self.grad_tol,
                "decrease_tol": self.decrease_tol,
                "substeps": self.substeps,
                "cap": self.cap,
                "violation_weight": self.violation_weight,
                "rtol": self.rtol,
                "atol": self.atol,
                "max_step": self.max_step,
                "seed": self.seed,
            },
            "output": {"directory": self.output_dir},
        }


def _build_boundary(spec: dict) -> BoundaryFunction:
    kind = spec.get("kind")
    if kind == "exponential":
        return BoundaryFunction.exponential(spec["a"], spec["b"], spec["c"])
    if kind == "constant":
        return BoundaryFunction.constant(spec["c"])
    raise ValueError(f"unknown boundary kind '{kind}'")


def _check_number(errors, section, name, value, positive=False, nonnegative=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        errors.append(f"{section}: {name} must be a number")
        return None
    v = float(value)
    if positive and not v > 0.0:
        errors.append(f"{section}: {name} must be positive")
        return None
    if nonnegative and v < 0.0:
        errors.append(f"{section}: {name} must be nonnegative")
        return None
    return v


def _validate_funnel_spec(errors, label, spec) -> Optional[dict]:
    if not isinstance(spec, dict):
        errors.append(f"funnels: {label} must be an object")
        return None
    kind = spec.get("kind")
    if kind not in _FUNNEL_KINDS:
        errors.append(f"funnels: {label} has unknown kind '{kind}'")
        return None
    needed = ("a", "b", "c") if kind == "exponential" else ("c",)
    out = {"kind": kind}
    ok = True
    for key in needed:
        v = _check_number(errors, "funnels", f"{label}.{key}", spec.get(key))
        if v is None:
            ok = False
        else:
            out[key] = v
    return out if ok else None


def from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from a parsed JSON document.

    Raises :class:`ConfigValidationError` carrying all problems found.
    """
    errors: List[str] = []
    if not isinstance(raw, dict):
        raise ConfigValidationError(["top level must be a JSON object"])

    plant_sec = raw.get("plant") or {}
    funnel_sec = raw.get("funnels") or {}
    controller = raw.get("controller") or {}
    solver_sec = raw.get("solver") or {}
    output_sec = raw.get("output") or {}

    plant_name = plant_sec.get("name", "")
    plant_params = plant_sec.get("params", {})
    plant = None
    if not isinstance(plant_params, dict):
        errors.append("plant: params must be an object")
        plant_params = {}
    try:
        plant = build_plant(plant_name, plant_params)
    except ValueError as exc:
        errors.append(f"plant: {exc}")

    psi0 = _validate_funnel_spec(errors, "psi0", funnel_sec.get("psi0"))
    psi1 = _validate_funnel_spec(errors, "psi1", funnel_sec.get("psi1"))

    reference = raw.get("reference", "")
    if reference not in available_references():
        errors.append(f"reference: unknown reference '{reference}'")

    horizon = _check_number(errors, "controller", "horizon", controller.get("horizon"), positive=True)
    shift = controller.get("shift")
    if shift is None or not isinstance(shift, (int, float)) or isinstance(shift, bool):
        errors.append("controller: shift must be a number")
        shift = None
    elif not shift > 0.0:
        errors.append("controller: shift must be positive")
        shift = None
    else:
        shift = float(shift)
    bound = _check_number(errors, "controller", "bound", controller.get("bound"), positive=True)
    lambda_u = _check_number(
        errors, "controller", "lambda_u", controller.get("lambda_u"), nonnegative=True
    )
    t0 = _check_number(errors, "controller", "t0", controller.get("t0", 0.0), nonnegative=True)
    t_end = _check_number(errors, "controller", "t_end", controller.get("t_end"))
    if horizon is not None and shift is not None:
        if horizon <= shift:
            errors.append("controller: horizon must exceed shift")
        else:
            ratio = horizon / shift
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                errors.append("controller: horizon not a multiple of shift")
    if t0 is not None and t_end is not None and t_end < t0:
        errors.append("controller: t_end must not precede t0")

    x0 = controller.get("x0")
    if not isinstance(x0, (list, tuple)) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in x0 or []
    ):
        errors.append("controller: x0 must be a list of numbers")
        x0 = None
    elif plant is not None and len(x0) != plant.n:
        errors.append(f"controller: x0 must have length {plant.n}")
        x0 = None
    else:
        x0 = [float(v) for v in x0]

    schemes = controller.get("schemes", [])
    if not isinstance(schemes, (list, tuple)):
        errors.append("controller: schemes must be a list")
        schemes = []
    else:
        bad = [s for s in schemes if s not in SCHEMES]
        if bad:
            errors.append(
                f"controller: unknown scheme(s) {', '.join(map(repr, bad))}; "
                f"valid schemes are {', '.join(SCHEMES)}"
            )
            schemes = [s for s in schemes if s in SCHEMES]
        schemes = list(schemes)

    max_iterations = solver_sec.get("max_iterations", 200)
    if not isinstance(max_iterations, int) or isinstance(max_iterations, bool) or max_iterations < 1:
        errors.append("solver: max_iterations must be a positive integer")
        max_iterations = 200
    grad_tol = _check_number(errors, "solver", "grad_tol", solver_sec.get("grad_tol", 1e-6), positive=True)
    decrease_tol = _check_number(
        errors, "solver", "decrease_tol", solver_sec.get("decrease_tol", 1e-9), positive=True
    )
    substeps = solver_sec.get("substeps", 4)
    if not isinstance(substeps, int) or isinstance(substeps, bool) or substeps < 1:
        errors.append("solver: substeps must be a positive integer")
        substeps = 4
    cap = _check_number(errors, "solver", "cap", solver_sec.get("cap", 1e8), positive=True)
    violation_weight = _check_number(
        errors, "solver", "violation_weight", solver_sec.get("violation_weight", 1e6), positive=True
    )
    rtol = _check_number(errors, "solver", "rtol", solver_sec.get("rtol", 1e-8), positive=True)
    atol = _check_number(errors, "solver", "atol", solver_sec.get("atol", 1e-10), positive=True)
    max_step = _check_number(errors, "solver", "max_step", solver_sec.get("max_step", 0.01), positive=True)
    seed = solver_sec.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors.append("solver: seed must be an integer")
        seed = 0

    output_dir = output_sec.get("directory", "runs/out")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output: directory must be a non-empty string")
        output_dir = "runs/out"

    if errors:
        raise ConfigValidationError(errors)

    return ExperimentConfig(
        plant_name=plant_name,
        plant_params=dict(plant_params),
        psi0=psi0,
        psi1=psi1,
        reference=reference,
        horizon=horizon,
        shift=shift,
        bound=bound,
        lambda_u=lambda_u,
        t0=t0,
        x0=x0,
        t_end=t_end,
        schemes=schemes,
        max_iterations=max_iterations,
        grad_tol=grad_tol,
        decrease_tol=decrease_tol,
        substeps=substeps,
        cap=cap,
        violation_weight=violation_weight,
        rtol=rtol,
        atol=atol,
        max_step=max_step,
        seed=seed,
        output_dir=output_dir,
    )


def bundled_config_path(name: str) -> Path:
    """Path of a configuration shipped with the package (e.g. 'paper_sec5')."""
    stem = name[:-5] if name.endswith(".json") else name
    trav = resources.files("funnel_mpc").joinpath("configs", f"{stem}.json")
    return Path(str(trav))


def resolve_config_path(path: str) -> Path:
    """Resolve a config argument: an existing file, or a bundled config name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_config_path(p.name)
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"config file not found: {path}")


def load_config(path) -> ExperimentConfig:
    """Load and fully validate a JSON config file.

    Raises :class:`ConfigValidationError` with every problem found, or
    FileNotFoundError if the path does not resolve.
    """
    p = resolve_config_path(str(path))
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigValidationError([f"not valid JSON: {exc}"]) from exc
    return from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
