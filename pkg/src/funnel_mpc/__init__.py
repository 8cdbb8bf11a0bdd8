"""Funnel MPC for relative-degree-two SISO systems.

Receding-horizon control with barrier stage costs that keep the tracking
error and its derivative inside prescribed performance funnels, under a
hard input bound. Ships a mass-on-car benchmark comparing the two-funnel
stage cost against a one-funnel variant that ignores the error rate.
"""

from .funnel import (
    BoundaryFunction,
    FunnelCheck,
    FunnelPair,
    G0Result,
    G1Result,
    eval_boundary,
    in_funnel,
    sampling_grid,
    validate_g0,
    validate_g1,
)
from .plant import (
    MassOnCarParams,
    PlantModel,
    ReferenceSignal,
    RelativeDegreeResult,
    available_plants,
    available_references,
    build_plant,
    build_reference,
    lie_relative_degree_check,
    mass_on_car_build,
    output_and_derivative,
    reference_cosine,
)
from .sim import (
    ControlSequence,
    DivergenceError,
    IntegrationError,
    IntegratorConfig,
    StiffnessError,
    Trajectory,
    concat_trajectories,
    integrate_adaptive,
    integrate_fixed,
)
from .cost import SCHEMES, RunningCost, StageCostSpec, StageCostValue, running_cost, stage_cost
from .ocp import (
    AdmissibilityResult,
    OcpProblem,
    OcpSolution,
    SolverConfig,
    SolverError,
    SolverStats,
    admissible,
    shift_warm_start,
    solve_ocp,
)
from .mpc import (
    AuditReport,
    AuditViolation,
    ClosedLoopRun,
    FmpcConfig,
    StepRecord,
    audit_recursive_feasibility,
    check_initial_feasibility,
    run_fmpc,
)
from .config import (
    ConfigValidationError,
    ExperimentConfig,
    bundled_config_path,
    load_config,
    save_config,
)
from .cli import emit_csv, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BoundaryFunction",
    "FunnelCheck",
    "FunnelPair",
    "G0Result",
    "G1Result",
    "eval_boundary",
    "in_funnel",
    "sampling_grid",
    "validate_g0",
    "validate_g1",
    "MassOnCarParams",
    "PlantModel",
    "ReferenceSignal",
    "RelativeDegreeResult",
    "available_plants",
    "available_references",
    "build_plant",
    "build_reference",
    "lie_relative_degree_check",
    "mass_on_car_build",
    "output_and_derivative",
    "reference_cosine",
    "ControlSequence",
    "DivergenceError",
    "IntegrationError",
    "IntegratorConfig",
    "StiffnessError",
    "Trajectory",
    "concat_trajectories",
    "integrate_adaptive",
    "integrate_fixed",
    "SCHEMES",
    "RunningCost",
    "StageCostSpec",
    "StageCostValue",
    "running_cost",
    "stage_cost",
    "AdmissibilityResult",
    "OcpProblem",
    "OcpSolution",
    "SolverConfig",
    "SolverError",
    "SolverStats",
    "admissible",
    "shift_warm_start",
    "solve_ocp",
    "AuditReport",
    "AuditViolation",
    "ClosedLoopRun",
    "FmpcConfig",
    "StepRecord",
    "audit_recursive_feasibility",
    "check_initial_feasibility",
    "run_fmpc",
    "ConfigValidationError",
    "ExperimentConfig",
    "bundled_config_path",
    "load_config",
    "save_config",
    "emit_csv",
    "run_experiment",
    "__version__",
]
