"""Performance funnel boundaries.

A funnel is a time-varying tube around the reference signal that the
tracking error has to stay strictly inside. This module holds single
boundary functions (radius plus analytic derivative), pairs of boundaries
for the error and its derivative, the positivity and compatibility checks
that make a pair usable, and pointwise membership tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "BoundaryFunction",
    "FunnelPair",
    "G0Result",
    "G1Result",
    "FunnelCheck",
    "eval_boundary",
    "validate_g0",
    "validate_g1",
    "in_funnel",
    "sampling_grid",
    "eval_on_grid",
]

#: Default spacing of the validation grid, in seconds.
DEFAULT_GRID_STEP = 1e-3


def eval_on_grid(fn: Callable, ts: np.ndarray) -> np.ndarray:
    """Evaluate a scalar-or-vectorized callable on a 1-D time grid.

    Built-in boundaries and references broadcast over arrays; user supplied
    callables may be scalar only, in which case we fall back to a loop.
    """
    try:
        out = np.asarray(fn(ts), dtype=float)
        if out.shape == ts.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(fn(t)) for t in ts])


@dataclass(frozen=True)
class BoundaryFunction:
    """Funnel radius over time together with its analytic derivative.

    ``value`` must stay strictly positive for t >= 0 and ``derivative``
    must be its time derivative; both are checked by sampling, not
    symbolically. The built-in constructors broadcast over numpy arrays.
    """

    value: Callable
    derivative: Callable
    kind: str = "custom"
    params: tuple = ()

    @staticmethod
    def exponential(a: float, b: float, c: float) -> "BoundaryFunction":
        """Radius ``a * exp(-b t) + c``."""
        return BoundaryFunction(
            value=lambda t: a * np.exp(-b * t) + c,
            derivative=lambda t: -a * b * np.exp(-b * t),
            kind="exponential",
            params=(float(a), float(b), float(c)),
        )

    @staticmethod
    def constant(c: float) -> "BoundaryFunction":
        """Fixed radius ``c``."""
        return BoundaryFunction(
            value=lambda t: np.full_like(np.asarray(t, dtype=float), c),
            derivative=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
            kind="constant",
            params=(float(c),),
        )

    @staticmethod
    def from_callables(value: Callable, derivative: Callable) -> "BoundaryFunction":
        """Wrap user supplied radius and derivative callables."""
        return BoundaryFunction(value=value, derivative=derivative, kind="custom")


@dataclass
class FunnelPair:
    """Error funnel and error-derivative funnel.

    ``epsilon`` is the compatibility margin min_t psi1(t) + psi0'(t); it is
    filled in by :func:`validate_g1` once the pair passes the check and is
    ``None`` before that.
    """

    psi0: BoundaryFunction
    psi1: BoundaryFunction
    epsilon: Optional[float] = None


@dataclass(frozen=True)
class G0Result:
    """Outcome of the uniform-positivity check for one boundary."""

    ok: bool
    inf_value: Optional[float]
    violation_t: Optional[float]


@dataclass(frozen=True)
class G1Result:
    """Outcome of the pair compatibility check."""

    ok: bool
    best_epsilon: Optional[float]
    violation_t: Optional[float]
    reason: Optional[str] = None


@dataclass(frozen=True)
class FunnelCheck:
    """Pointwise membership result.

    ``margins`` holds psi_i(t) - |e_i| for both coordinates. ``failed`` is
    the index of the first violated funnel (position checked first) and is
    ``None`` when the point is strictly inside both.
    """

    inside: bool
    margins: tuple
    failed: Optional[int]


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    if grid[0] < 0.0:
        raise ValueError("grid must start at a nonnegative time")
    if grid.size > 1 and not np.all(np.diff(grid) > 0.0):
        raise ValueError("grid must be strictly increasing")
    return grid


def sampling_grid(t_end: float, step: float = DEFAULT_GRID_STEP, t_start: float = 0.0) -> np.ndarray:
    """Uniform validation grid covering [t_start, t_end] with the given step."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    n = max(1, int(round((t_end - t_start) / step)))
    return np.linspace(t_start, t_end, n + 1)


def eval_boundary(b: BoundaryFunction, t: float) -> tuple:
    """Radius and radius derivative at time t >= 0."""
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got {t}")
    return float(b.value(t)), float(b.derivative(t))


def validate_g0(b: BoundaryFunction, grid) -> G0Result:
    """Check that the radius is strictly positive at every grid point.

    Returns the sampled infimum on success and the first offending time on
    failure.
    """
    grid = _check_grid(grid)
    vals = eval_on_grid(b.value, grid)
    bad = np.flatnonzero(~(vals > 0.0))
    if bad.size:
        return G0Result(ok=False, inf_value=None, violation_t=float(grid[bad[0]]))
    return G0Result(ok=True, inf_value=float(vals.min()), violation_t=None)


def validate_g1(pair: FunnelPair, grid) -> G1Result:
    """Check pair compatibility: psi1(t) + psi0'(t) > 0 on the grid.

    When the error rides a shrinking position funnel its derivative must be
    able to follow the boundary, which requires the derivative funnel to
    dominate -psi0'. Both boundaries must individually pass
    :func:`validate_g0`; their violations propagate. On success the sampled
    margin is stored in ``pair.epsilon``.
    """
    grid = _check_grid(grid)
    for label, b in (("psi0", pair.psi0), ("psi1", pair.psi1)):
        res = validate_g0(b, grid)
        if not res.ok:
            return G1Result(
                ok=False,
                best_epsilon=None,
                violation_t=res.violation_t,
                reason=f"{label} is not positive at t={res.violation_t:g}",
            )
    slack = eval_on_grid(pair.psi1.value, grid) + eval_on_grid(pair.psi0.derivative, grid)
    bad = np.flatnonzero(slack <= 0.0)
    if bad.size:
        t_bad = float(grid[bad[0]])
        return G1Result(
            ok=False,
            best_epsilon=None,
            violation_t=t_bad,
            reason=f"psi1 cannot follow the shrinking psi0 at t={t_bad:g}",
        )
    best = float(slack.min())
    pair.epsilon = best
    return G1Result(ok=True, best_epsilon=best, violation_t=None)


def in_funnel(pair: FunnelPair, t: float, e0: float, e1: float) -> FunnelCheck:
    """Strict membership of an error pair in both funnels at time t."""
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got {t}")
    p0 = float(pair.psi0.value(t))
    p1 = float(pair.psi1.value(t))
    m0 = p0 - abs(e0)
    m1 = p1 - abs(e1)
    inside = abs(e0) < p0 and abs(e1) < p1
    if inside:
        failed = None
    else:
        failed = 0 if not abs(e0) < p0 else 1
    return FunnelCheck(inside=inside, margins=(m0, m1), failed=failed)
