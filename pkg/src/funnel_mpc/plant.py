"""Control-affine SISO plants and reference signals.

Plants have the form xdot = f(x) + g(x) u with scalar output y = h(x).
The output gradient h_grad is carried explicitly so that the output rate
ydot = h_grad(x) . (f(x) + g(x) u) needs no numerical differentiation.
The controller additionally assumes the input shows up for the first time
in the second output derivative; :func:`lie_relative_degree_check`
verifies that assumption by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PlantModel",
    "MassOnCarParams",
    "ReferenceSignal",
    "RelativeDegreeResult",
    "mass_on_car_build",
    "output_and_derivative",
    "lie_relative_degree_check",
    "reference_cosine",
    "build_plant",
    "build_reference",
    "available_plants",
    "available_references",
]

#: Relative central-difference step used by the relative-degree probe.
#: cbrt(machine eps) balances roundoff against truncation; the probe scales
#: it by the state magnitude so the difference quotient stays well
#: conditioned far from the origin.
LIE_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class PlantModel:
    """Control-affine SISO plant.

    ``vectorized`` marks plants whose fields accept batched states of shape
    (B, n) in addition to single states of shape (n,); the OCP solver can
    then evaluate whole candidate batches in one pass.
    """

    n: int
    f: Callable
    g: Callable
    h: Callable
    h_grad: Callable
    vectorized: bool = False


@dataclass(frozen=True)
class ReferenceSignal:
    """Reference output with its first two derivatives."""

    y_ref: Callable
    y_ref_dot: Callable
    y_ref_ddot: Callable


@dataclass(frozen=True)
class MassOnCarParams:
    """Mass on a spring-damper carriage with an inclined drive.

    m1 is the carriage mass, m2 the mass sliding on the ramp inclined by
    theta, k and d the spring and damper constants of the suspension.
    """

    m1: float
    m2: float
    k: float
    d: float
    theta: float

    def __post_init__(self):
        if self.m1 <= 0.0 or self.m2 <= 0.0:
            raise ValueError("masses must be positive")
        if self.k <= 0.0 or self.d <= 0.0:
            raise ValueError("spring and damper constants must be positive")
        if not 0.0 <= self.theta < math.pi / 2.0:
            raise ValueError("theta must lie in [0, pi/2)")

    def mass_matrix(self) -> np.ndarray:
        c = math.cos(self.theta)
        return np.array(
            [
                [self.m1 + self.m2, self.m2 * c],
                [self.m2 * c, self.m2],
            ]
        )


def mass_on_car_build(p: MassOnCarParams) -> PlantModel:
    """Build the mass-on-car plant.

    State layout x = (z, s, zdot, sdot): carriage position z, relative ramp
    displacement s and their rates. The force u acts on the carriage, the
    spring-damper force k s + d sdot acts along the ramp, and the measured
    output is the horizontal mass position y = z + s cos(theta). The mass
    matrix is constant and inverted once here, so f is linear and g is a
    constant field; all fields support batched states.
    """
    c = math.cos(p.theta)
    mm = p.mass_matrix()
    det = float(np.linalg.det(mm))
    if det <= 1e-12:
        raise ValueError("mass matrix is singular")
    minv = np.array([[mm[1, 1], -mm[0, 1]], [-mm[1, 0], mm[0, 0]]]) / det

    a = np.zeros((4, 4))
    a[0, 2] = 1.0
    a[1, 3] = 1.0
    # accelerations: (zddot, sddot) = minv @ (u, -(k s + d sdot))
    a[2, 1] = -p.k * minv[0, 1]
    a[2, 3] = -p.d * minv[0, 1]
    a[3, 1] = -p.k * minv[1, 1]
    a[3, 3] = -p.d * minv[1, 1]
    g_vec = np.array([0.0, 0.0, minv[0, 0], minv[1, 0]])
    h_vec = np.array([1.0, c, 0.0, 0.0])

    def f(x):
        return np.asarray(x, dtype=float) @ a.T

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(g_vec, x.shape)

    def h(x):
        return np.asarray(x, dtype=float) @ h_vec

    def h_grad(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(h_vec, x.shape)

    return PlantModel(n=4, f=f, g=g, h=h, h_grad=h_grad, vectorized=True)


def output_and_derivative(pm: PlantModel, x, u: float) -> tuple:
    """Output y and output rate ydot at state x under input u."""
    x = np.asarray(x, dtype=float)
    if x.shape != (pm.n,):
        raise ValueError(f"state must have shape ({pm.n},), got {x.shape}")
    y = float(pm.h(x))
    xdot = pm.f(x) + pm.g(x) * float(u)
    ydot = float(np.dot(pm.h_grad(x), xdot))
    return y, ydot


@dataclass(frozen=True)
class RelativeDegreeResult:
    """Outcome of the sampled relative-degree-two check."""

    confirmed: bool
    gain_min: Optional[float]
    gain_max: Optional[float]
    failed_state: Optional[np.ndarray]
    reason: Optional[str] = None


def lie_relative_degree_check(
    pm: PlantModel,
    samples,
    tol: float = 1e-9,
    tol_lower: Optional[float] = None,
) -> RelativeDegreeResult:
    """Confirm relative degree two on a set of sample states.

    At each state the direct feedthrough L_g h = h_grad . g must vanish
    (|.| <= tol) and the input gain into the second derivative,
    L_g L_f h, obtained by central-differencing x -> h_grad(x) . f(x)
    along the unit direction g(x)/|g(x)| with a step proportional to the
    state magnitude, must be bounded away from zero (|.| >= tol_lower).
    ``tol_lower`` defaults to 1e3 * tol, matching the default pairing
    tol = 1e-9, tol_lower = 1e-6.
    """
    states = [np.asarray(s, dtype=float) for s in samples]
    if not states:
        raise ValueError("samples must be non-empty")
    if tol_lower is None:
        tol_lower = 1e3 * tol

    def lie_f(z):
        return float(np.dot(pm.h_grad(z), pm.f(z)))

    gains = []
    for x in states:
        lgh = float(np.dot(pm.h_grad(x), pm.g(x)))
        if abs(lgh) > tol:
            return RelativeDegreeResult(
                confirmed=False,
                gain_min=None,
                gain_max=None,
                failed_state=x,
                reason=f"L_g h = {lgh:.3e} exceeds tol at a sample state",
            )
        d = np.asarray(pm.g(x), dtype=float)
        gnorm = float(np.linalg.norm(d))
        if gnorm == 0.0:
            gain = 0.0
        else:
            step = LIE_FD_STEP * (1.0 + float(np.max(np.abs(x))))
            unit = d / gnorm
            gain = gnorm * (lie_f(x + step * unit) - lie_f(x - step * unit)) / (2.0 * step)
        if abs(gain) < tol_lower:
            return RelativeDegreeResult(
                confirmed=False,
                gain_min=None,
                gain_max=None,
                failed_state=x,
                reason=f"input gain L_g L_f h = {gain:.3e} below tol_lower",
            )
        gains.append(gain)
    return RelativeDegreeResult(
        confirmed=True,
        gain_min=float(min(gains)),
        gain_max=float(max(gains)),
        failed_state=None,
    )


def reference_cosine() -> ReferenceSignal:
    """Cosine reference y_ref(t) = cos(t) with its derivatives."""
    return ReferenceSignal(
        y_ref=np.cos,
        y_ref_dot=lambda t: -np.sin(t),
        y_ref_ddot=lambda t: -np.cos(t),
    )


_PLANT_BUILDERS = {
    "mass_on_car": lambda params: mass_on_car_build(MassOnCarParams(**params)),
}

_REFERENCE_BUILDERS = {
    "cosine": reference_cosine,
}


def available_plants() -> tuple:
    return tuple(sorted(_PLANT_BUILDERS))


def available_references() -> tuple:
    return tuple(sorted(_REFERENCE_BUILDERS))


def build_plant(name: str, params: dict) -> PlantModel:
    """Look up a plant by name and build it from a parameter mapping."""
    if name not in _PLANT_BUILDERS:
        raise ValueError(f"unknown plant '{name}', available: {', '.join(available_plants())}")
    try:
        return _PLANT_BUILDERS[name](dict(params))
    except TypeError as exc:
        raise ValueError(f"bad parameters for plant '{name}': {exc}") from exc


def build_reference(name: str) -> ReferenceSignal:
    """Look up a reference signal by name."""
    if name not in _REFERENCE_BUILDERS:
        raise ValueError(
            f"unknown reference '{name}', available: {', '.join(available_references())}"
        )
    return _REFERENCE_BUILDERS[name]()
