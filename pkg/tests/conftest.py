"""Shared fixtures for the funnel MPC test suite.

The benchmark scenario used throughout: mass-on-car plant with
(m1, m2, k, d, theta) = (4, 1, 2, 1, pi/4), cosine reference, position
funnel 3 e^{-2t} + 0.1, rate funnel 6 e^{-t} + 0.1, prediction horizon
0.6 s, control interval 0.04 s, input bound 30, input weight 5e-3, run
on [0, 7] from the origin.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from funnel_mpc import (
    BoundaryFunction,
    FunnelPair,
    MassOnCarParams,
    PlantModel,
    ReferenceSignal,
    StageCostSpec,
    mass_on_car_build,
    reference_cosine,
    sampling_grid,
    validate_g1,
)

BENCHMARK_PLANT_PARAMS = {"m1": 4.0, "m2": 1.0, "k": 2.0, "d": 1.0, "theta": math.pi / 4.0}
HORIZON = 0.6
SHIFT = 0.04
BOUND = 30.0
LAMBDA_U = 5e-3
T_END = 7.0


def make_benchmark_funnels() -> FunnelPair:
    """Fresh funnel pair of the benchmark (epsilon not yet validated)."""
    return FunnelPair(
        psi0=BoundaryFunction.exponential(3.0, 2.0, 0.1),
        psi1=BoundaryFunction.exponential(6.0, 1.0, 0.1),
    )


def make_validated_funnels(t_end: float = T_END + HORIZON) -> FunnelPair:
    pair = make_benchmark_funnels()
    res = validate_g1(pair, sampling_grid(t_end))
    assert res.ok
    return pair


def make_harmonic_oscillator() -> PlantModel:
    """Test plant x1' = x2, x2' = -x1 + u, y = x1 (closed-form rotation)."""
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    gv = np.array([0.0, 1.0])
    hv = np.array([1.0, 0.0])
    return PlantModel(
        n=2,
        f=lambda x: np.asarray(x, dtype=float) @ rot.T,
        g=lambda x: np.broadcast_to(gv, np.asarray(x, dtype=float).shape),
        h=lambda x: np.asarray(x, dtype=float) @ hv,
        h_grad=lambda x: np.broadcast_to(hv, np.asarray(x, dtype=float).shape),
        vectorized=True,
    )


def make_blowup_plant() -> PlantModel:
    """Scalar plant x' = x^3 whose solutions escape in finite time."""

    def f(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return x**3

    return PlantModel(
        n=1,
        f=f,
        g=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        h=lambda x: float(np.asarray(x, dtype=float)[0]),
        h_grad=lambda x: np.ones(1),
        vectorized=False,
    )


def make_zero_reference() -> ReferenceSignal:
    zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))  # noqa: E731
    return ReferenceSignal(y_ref=zero, y_ref_dot=zero, y_ref_ddot=zero)


def make_constant_pair(r0: float = 1.0, r1: float = 1.0) -> FunnelPair:
    return FunnelPair(
        psi0=BoundaryFunction.constant(r0),
        psi1=BoundaryFunction.constant(r1),
    )


@pytest.fixture
def benchmark_funnels() -> FunnelPair:
    return make_benchmark_funnels()


@pytest.fixture
def validated_funnels() -> FunnelPair:
    return make_validated_funnels()


@pytest.fixture(scope="session")
def car_plant() -> PlantModel:
    return mass_on_car_build(MassOnCarParams(**BENCHMARK_PLANT_PARAMS))


@pytest.fixture(scope="session")
def cosine_ref() -> ReferenceSignal:
    return reference_cosine()


@pytest.fixture
def two_funnel_spec(validated_funnels, cosine_ref) -> StageCostSpec:
    return StageCostSpec(
        scheme="two_funnel",
        funnels=validated_funnels,
        lambda_u=LAMBDA_U,
        reference=cosine_ref,
    )


@pytest.fixture
def one_funnel_spec(validated_funnels, cosine_ref) -> StageCostSpec:
    return StageCostSpec(
        scheme="one_funnel",
        funnels=validated_funnels,
        lambda_u=LAMBDA_U,
        reference=cosine_ref,
    )
