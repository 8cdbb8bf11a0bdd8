"""Receding-horizon closed loop: stepping, handoff exactness, and the audit."""

import math

import numpy as np
import pytest

from funnel_mpc import (
    BoundaryFunction,
    FmpcConfig,
    FunnelPair,
    OcpProblem,
    audit_recursive_feasibility,
    check_initial_feasibility,
    run_fmpc,
)

from conftest import (
    BOUND,
    HORIZON,
    LAMBDA_U,
    SHIFT,
    T_END,
    make_benchmark_funnels,
)


def make_cfg(**overrides):
    kwargs = dict(
        horizon=HORIZON,
        shift=SHIFT,
        bound=BOUND,
        lambda_u=LAMBDA_U,
        scheme="two_funnel",
        t0=0.0,
        x0=np.zeros(4),
        t_end=T_END,
    )
    kwargs.update(overrides)
    return FmpcConfig(**kwargs)


class TestConfigValidation:
    def test_benchmark_step_count(self):
        assert make_cfg().n_steps() == 175

    def test_zero_length_run_has_no_steps(self):
        assert make_cfg(t_end=0.0).n_steps() == 0

    def test_partial_final_interval_rounds_up(self):
        assert make_cfg(t_end=0.1).n_steps() == 3

    @pytest.mark.parametrize(
        "overrides, message",
        [
            ({"shift": 0.0}, "shift must be positive"),
            ({"horizon": 0.04}, "horizon must exceed shift"),
            ({"horizon": 0.5}, "horizon not a multiple of shift"),
            ({"bound": -1.0}, "bound must be positive"),
            ({"lambda_u": -0.1}, "lambda_u must be nonnegative"),
            ({"t0": -1.0}, "t0 must be nonnegative"),
            ({"t0": 1.0, "t_end": 0.5}, "t_end must not precede t0"),
        ],
    )
    def test_invalid_configs_rejected(self, overrides, message):
        with pytest.raises(ValueError, match=message):
            make_cfg(**overrides)


class TestInitialFeasibility:
    def test_benchmark_initial_margins_are_exact(
        self, validated_funnels, cosine_ref, car_plant
    ):
        check = check_initial_feasibility(
            validated_funnels, cosine_ref, car_plant, 0.0, np.zeros(4)
        )
        assert check.inside
        assert check.failed is None
        assert check.margins == (2.1, 6.1)

    def test_zero_error_start_has_full_margins(self, validated_funnels, cosine_ref, car_plant):
        x0 = np.array([1.0, 0.0, 0.0, 0.0])  # output 1 = reference at t = 0
        check = check_initial_feasibility(validated_funnels, cosine_ref, car_plant, 0.0, x0)
        assert check.inside
        assert check.margins == (3.1, 6.1)

    def test_large_offset_fails_output_funnel(self, validated_funnels, cosine_ref, car_plant):
        x0 = np.array([5.0, 0.0, 0.0, 0.0])  # error 4 > 3.1
        check = check_initial_feasibility(validated_funnels, cosine_ref, car_plant, 0.0, x0)
        assert not check.inside
        assert check.failed == 0
        assert check.margins[0] < 0.0


class TestRunFmpc:
    def test_zero_length_run_returns_initial_sample(self, car_plant, cosine_ref):
        run = run_fmpc(make_cfg(t_end=0.0), car_plant, make_benchmark_funnels(), cosine_ref)
        assert run.per_step == []
        assert run.funnel_margins == []
        assert run.trajectory.n_samples == 1
        assert run.trajectory.times[0] == 0.0
        assert run.feasible_throughout
        assert run.error is None

    def test_infeasible_start_rejected(self, car_plant, cosine_ref):
        cfg = make_cfg(x0=np.array([5.0, 0.0, 0.0, 0.0]), t_end=0.2)
        with pytest.raises(ValueError, match="outside funnel"):
            run_fmpc(cfg, car_plant, make_benchmark_funnels(), cosine_ref)

    def test_incompatible_funnel_pair_rejected(self, car_plant, cosine_ref):
        pair = FunnelPair(
            psi0=BoundaryFunction.exponential(3.0, 2.0, 0.1),
            psi1=BoundaryFunction.constant(0.05),
        )
        with pytest.raises(ValueError, match="funnel pair rejected"):
            run_fmpc(make_cfg(t_end=0.2), car_plant, pair, cosine_ref)

    def test_short_closed_loop_run(self, car_plant, cosine_ref):
        cfg = make_cfg(t_end=0.2)
        run = run_fmpc(cfg, car_plant, make_benchmark_funnels(), cosine_ref)
        assert run.error is None
        assert len(run.per_step) == 5
        assert run.feasible_throughout
        assert run.cost_spec.scheme == "two_funnel"

        traj = run.trajectory
        assert np.all(np.diff(traj.times) > 0.0)
        assert traj.times[0] == 0.0
        assert traj.times[-1] == pytest.approx(0.2, abs=1e-12)

        for rec in run.per_step:
            # each step applies exactly the first level of its solution
            applied = rec.solution.controls.values[0]
            start = np.flatnonzero(traj.times == rec.t_hat)
            assert start.size == 1
            assert traj.inputs[start[0]] == applied
            interior = (traj.times > rec.t_hat + 1e-9) & (
                traj.times < rec.t_hat + cfg.shift - 1e-9
            )
            assert interior.any()
            assert np.all(traj.inputs[interior] == applied)
            assert rec.margins[0] > 0.0 and rec.margins[1] > 0.0
            assert rec.applied_inside
            assert abs(rec.solution.controls.values[0]) <= cfg.bound

        # the state handed to each step is exactly the trajectory sample there
        for rec in run.per_step[1:]:
            idx = np.flatnonzero(traj.times == rec.t_hat)
            assert idx.size == 1
            assert np.array_equal(traj.states[idx[0]], rec.x_hat)

        assert run.funnel_margins == [rec.margins for rec in run.per_step]

    def test_audit_accepts_clean_short_run(self, car_plant, cosine_ref):
        cfg = make_cfg(t_end=0.2)
        run = run_fmpc(cfg, car_plant, make_benchmark_funnels(), cosine_ref)
        template = OcpProblem(
            plant=car_plant,
            cost=run.cost_spec,
            t_hat=cfg.t0,
            x_hat=cfg.x0,
            horizon=cfg.horizon,
            control_step=cfg.shift,
            bound=cfg.bound,
        )
        report = audit_recursive_feasibility(run, template)
        assert report.steps_audited == 5
        assert report.ok
        assert report.violations == ()

    def test_starved_input_bound_breaks_feasibility_and_audit(self, car_plant, cosine_ref):
        # |u| <= 0.1 moves the output by at most ~1/90, far too little to
        # track the cosine, so the error must eventually leave the funnels
        cfg = make_cfg(bound=0.1, t_end=2.0)
        run = run_fmpc(cfg, car_plant, make_benchmark_funnels(), cosine_ref)
        assert run.error is None
        assert len(run.per_step) == 50
        assert not run.feasible_throughout
        template = OcpProblem(
            plant=car_plant,
            cost=run.cost_spec,
            t_hat=cfg.t0,
            x_hat=cfg.x0,
            horizon=cfg.horizon,
            control_step=cfg.shift,
            bound=cfg.bound,
        )
        report = audit_recursive_feasibility(run, template)
        assert report.steps_audited == 50
        assert not report.ok
        assert len(report.violations) > 0
        first = report.violations[0]
        assert first.step_index >= 0
        assert isinstance(first.reason, str) and first.reason
