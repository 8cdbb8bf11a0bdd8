"""Mass-on-car plant, reference signals and the relative-degree check."""

import math

import numpy as np
import pytest

from conftest import BENCHMARK_PLANT_PARAMS, make_harmonic_oscillator
from funnel_mpc import (
    ControlSequence,
    MassOnCarParams,
    PlantModel,
    available_plants,
    available_references,
    build_plant,
    build_reference,
    integrate_adaptive,
    lie_relative_degree_check,
    mass_on_car_build,
    output_and_derivative,
    reference_cosine,
)

C45 = math.cos(math.pi / 4.0)


class TestMassOnCarParams:
    def test_mass_matrix(self):
        p = MassOnCarParams(**BENCHMARK_PLANT_PARAMS)
        mm = p.mass_matrix()
        assert np.allclose(mm, [[5.0, C45], [C45, 1.0]], rtol=0, atol=0)
        assert np.linalg.det(mm) == pytest.approx(4.5, abs=1e-12)

    @pytest.mark.parametrize(
        "bad",
        [
            {"m1": 0.0},
            {"m2": -1.0},
            {"k": 0.0},
            {"d": -0.5},
            {"theta": math.pi / 2.0},
            {"theta": -0.1},
        ],
    )
    def test_invalid_parameters_rejected(self, bad):
        params = dict(BENCHMARK_PLANT_PARAMS)
        params.update(bad)
        with pytest.raises(ValueError):
            MassOnCarParams(**params)


class TestMassOnCarDynamics:
    def test_origin_is_equilibrium(self, car_plant):
        x = np.zeros(4)
        assert np.all(car_plant.f(x) == 0.0)

    def test_unit_input_acceleration_at_origin(self, car_plant):
        # (z'', s'') = M^{-1} (1, 0) = (2/9, -sqrt(2)/9)
        x = np.zeros(4)
        rate = car_plant.f(x) + car_plant.g(x) * 1.0
        assert np.allclose(rate, [0.0, 0.0, 2.0 / 9.0, -math.sqrt(2.0) / 9.0], atol=1e-12)

    def test_spring_deflection_acceleration(self, car_plant):
        # (z'', s'') = M^{-1} (0, -k s) with s = 1
        x = np.array([0.0, 1.0, 0.0, 0.0])
        rate = car_plant.f(x)
        assert np.allclose(
            rate, [0.0, 0.0, 2.0 * C45 / 4.5, -2.0 * 5.0 / 4.5], atol=1e-10
        )
        assert rate[2] == pytest.approx(0.3142697, abs=1e-7)
        assert rate[3] == pytest.approx(-2.2222222, abs=1e-7)

    def test_velocity_passthrough(self, car_plant):
        x = np.array([0.0, 0.0, 1.5, -0.5])
        rate = car_plant.f(x)
        assert rate[0] == 1.5
        assert rate[1] == -0.5

    def test_batched_fields_match_single_states(self, car_plant):
        rng = np.random.default_rng(3)
        batch = rng.uniform(-5.0, 5.0, size=(6, 4))
        fb = car_plant.f(batch)
        gb = car_plant.g(batch)
        hb = car_plant.h(batch)
        hgb = car_plant.h_grad(batch)
        for i, x in enumerate(batch):
            assert np.allclose(fb[i], car_plant.f(x), rtol=1e-14, atol=1e-14)
            assert np.array_equal(gb[i], car_plant.g(x))
            assert hb[i] == pytest.approx(float(car_plant.h(x)), rel=1e-14)
            assert np.array_equal(hgb[i], car_plant.h_grad(x))

    def test_output_gradient_matches_finite_differences(self, car_plant):
        rng = np.random.default_rng(11)
        h = 1e-6
        for _ in range(50):
            x = rng.uniform(-10.0, 10.0, size=4)
            v = rng.normal(size=4)
            v /= np.linalg.norm(v)
            fd = (float(car_plant.h(x + h * v)) - float(car_plant.h(x - h * v))) / (2.0 * h)
            assert fd == pytest.approx(float(np.dot(car_plant.h_grad(x), v)), rel=1e-6, abs=1e-9)

    def test_energy_dissipates_without_input(self, car_plant):
        # V = kinetic energy + spring energy is non-increasing when u = 0
        p = MassOnCarParams(**BENCHMARK_PLANT_PARAMS)
        mm = p.mass_matrix()
        x0 = np.array([0.0, 1.0, 0.0, 0.0])
        u = ControlSequence(t_start=0.0, step=20.0, values=[0.0])
        traj = integrate_adaptive(car_plant, x0, 0.0, u)
        vel = traj.states[:, 2:]
        energy = 0.5 * np.einsum("ij,jk,ik->i", vel, mm, vel) + 0.5 * p.k * traj.states[:, 1] ** 2
        assert np.all(np.diff(energy) < 1e-9)
        assert energy[-1] < 0.05 * energy[0]


class TestOutputAndDerivative:
    def test_zero_state(self, car_plant):
        assert output_and_derivative(car_plant, np.zeros(4), 12.0) == (0.0, 0.0)

    def test_position_output(self, car_plant):
        y, ydot = output_and_derivative(car_plant, np.array([1.0, 1.0, 0.0, 0.0]), 0.0)
        assert y == pytest.approx(1.0 + C45, rel=1e-15)
        assert y == pytest.approx(1.7071068, abs=1e-7)
        assert ydot == 0.0

    def test_rate_is_input_independent(self, car_plant):
        x = np.array([0.0, 0.0, 1.0, 1.0])
        results = [output_and_derivative(car_plant, x, u) for u in (-30.0, 0.0, 5.0, 30.0)]
        ys = {r[0] for r in results}
        ydots = {r[1] for r in results}
        assert ys == {0.0}
        assert len(ydots) == 1
        assert ydots.pop() == pytest.approx(1.0 + C45, rel=1e-15)

    def test_wrong_state_shape_rejected(self, car_plant):
        with pytest.raises(ValueError, match="shape"):
            output_and_derivative(car_plant, np.zeros(3), 0.0)


class TestRelativeDegreeCheck:
    def test_mass_on_car_is_relative_degree_two(self, car_plant):
        rng = np.random.default_rng(5)
        states = rng.uniform(-10.0, 10.0, size=(100, 4))
        res = lie_relative_degree_check(car_plant, states)
        assert res.confirmed
        assert res.failed_state is None
        # the input-to-acceleration gain is the constant 1/9
        assert res.gain_min == pytest.approx(1.0 / 9.0, abs=1e-9)
        assert res.gain_max == pytest.approx(1.0 / 9.0, abs=1e-9)

    def test_direct_feedthrough_vanishes(self, car_plant):
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rng.uniform(-10.0, 10.0, size=4)
            assert abs(float(np.dot(car_plant.h_grad(x), car_plant.g(x)))) < 1e-9

    def test_single_integrator_fails(self):
        pm = PlantModel(
            n=1,
            f=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            g=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            h=lambda x: float(np.asarray(x, dtype=float)[0]),
            h_grad=lambda x: np.ones(1),
        )
        res = lie_relative_degree_check(pm, [np.array([0.5])])
        assert not res.confirmed
        assert "L_g h" in res.reason
        assert res.failed_state is not None

    def test_degenerate_tolerance_rejects_the_gain(self, car_plant):
        # tol = 1e3 drags tol_lower up to 1e6, far above the 1/9 gain
        res = lie_relative_degree_check(car_plant, [np.zeros(4)], tol=1e3)
        assert not res.confirmed
        assert "below tol_lower" in res.reason

    def test_empty_samples_rejected(self, car_plant):
        with pytest.raises(ValueError, match="non-empty"):
            lie_relative_degree_check(car_plant, [])

    def test_harmonic_oscillator_gain(self):
        # x1' = x2, x2' = -x1 + u has L_g h = 0 and L_g L_f h = 1
        pm = make_harmonic_oscillator()
        res = lie_relative_degree_check(pm, np.random.default_rng(9).uniform(-3, 3, (20, 2)))
        assert res.confirmed
        assert res.gain_min == pytest.approx(1.0, abs=1e-9)
        assert res.gain_max == pytest.approx(1.0, abs=1e-9)


class TestReferenceSignals:
    def test_cosine_values(self):
        ref = reference_cosine()
        assert (ref.y_ref(0.0), ref.y_ref_dot(0.0), ref.y_ref_ddot(0.0)) == (1.0, 0.0, -1.0)
        assert float(ref.y_ref(math.pi / 2.0)) == pytest.approx(0.0, abs=1e-15)
        assert float(ref.y_ref_dot(math.pi / 2.0)) == -1.0
        assert float(ref.y_ref(7.0)) == pytest.approx(0.7539023, abs=1e-7)
        assert float(ref.y_ref_dot(7.0)) == pytest.approx(-0.6569866, abs=1e-7)
        assert float(ref.y_ref_ddot(7.0)) == pytest.approx(-math.cos(7.0), rel=1e-15)

    def test_cosine_derivative_chain(self):
        ref = reference_cosine()
        rng = np.random.default_rng(13)
        ts = rng.uniform(0.0, 10.0, size=200)
        h = 1e-6
        fd1 = (np.asarray(ref.y_ref(ts + h)) - np.asarray(ref.y_ref(ts - h))) / (2.0 * h)
        fd2 = (np.asarray(ref.y_ref_dot(ts + h)) - np.asarray(ref.y_ref_dot(ts - h))) / (2.0 * h)
        assert np.allclose(fd1, np.asarray(ref.y_ref_dot(ts)), atol=1e-6)
        assert np.allclose(fd2, np.asarray(ref.y_ref_ddot(ts)), atol=1e-6)


class TestRegistries:
    def test_available_names(self):
        assert available_plants() == ("mass_on_car",)
        assert available_references() == ("cosine",)

    def test_build_plant(self):
        pm = build_plant("mass_on_car", BENCHMARK_PLANT_PARAMS)
        assert pm.n == 4
        assert pm.vectorized

    def test_unknown_plant(self):
        with pytest.raises(ValueError, match="unknown plant"):
            build_plant("pendulum", {})

    def test_missing_parameters(self):
        with pytest.raises(ValueError, match="bad parameters"):
            build_plant("mass_on_car", {"m1": 4.0})

    def test_invalid_parameter_values(self):
        with pytest.raises(ValueError, match="masses"):
            build_plant("mass_on_car", dict(BENCHMARK_PLANT_PARAMS, m1=-4.0))

    def test_build_reference(self):
        ref = build_reference("cosine")
        assert float(ref.y_ref(0.0)) == 1.0

    def test_unknown_reference(self):
        with pytest.raises(ValueError, match="unknown reference"):
            build_reference("square_wave")
