#!/usr/bin/env python3
"""
Tests for the diffusion schedule and DDIM timestep plans
"""

import numpy as np
import pytest

from sts_lab.schedule import betas_from_alpha_bars, build_schedule, plan_timesteps


def test_single_step_schedule():
    schedule = build_schedule(1, 0.5, 0.5)
    np.testing.assert_allclose(schedule.alpha_bars, [1.0, 0.5])


def test_default_ramp_first_step():
    schedule = build_schedule(1000, 1e-4, 0.02)
    assert schedule.alpha_bar(1) == pytest.approx(0.9999, abs=1e-15)
    assert schedule.total_steps == 1000


def test_two_step_hand_computation():
    schedule = build_schedule(2, 0.1, 0.3)
    np.testing.assert_allclose(schedule.alpha_bars, [1.0, 0.9, 0.63], atol=1e-12)


def test_random_ramps_are_monotone_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(50):
        lo, hi = np.sort(rng.uniform(1e-5, 0.5, size=2))
        total = int(rng.integers(1, 400))
        schedule = build_schedule(total, float(lo), float(hi))
        assert np.all(np.diff(schedule.alpha_bars) < 0)
        assert np.all(schedule.alpha_bars > 0) and schedule.alpha_bars[0] == 1.0
        np.testing.assert_allclose(betas_from_alpha_bars(schedule.alpha_bars), schedule.betas, atol=1e-10)


def test_schedule_arrays_are_read_only():
    schedule = build_schedule(10, 1e-3, 1e-2)
    with pytest.raises(ValueError):
        schedule.alpha_bars[1] = 0.5


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (-3, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.1, 1.0), (10, 0.3, 0.2)])
def test_build_schedule_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


def test_plan_single_step_is_t():
    plan = plan_timesteps(build_schedule(1000, 1e-4, 0.02), 1)
    assert plan.steps == (1000,)


def test_plan_twenty_steps_stride_fifty():
    plan = plan_timesteps(build_schedule(1000, 1e-4, 0.02), 20)
    assert len(plan) == 20
    assert plan.steps[-1] == 1000
    assert set(np.diff(plan.steps)) == {50}
    assert plan.steps[0] == 50


def test_plan_identity_when_s_equals_t():
    plan = plan_timesteps(build_schedule(4, 0.1, 0.2), 4)
    assert plan.steps == (1, 2, 3, 4)


def test_plan_rejects_too_many_steps():
    with pytest.raises(ValueError):
        plan_timesteps(build_schedule(4, 0.1, 0.2), 5)


def test_plan_pairs_cover_boundary():
    plan = plan_timesteps(build_schedule(4, 0.1, 0.2), 2)
    assert list(plan.sampling_pairs()) == [(4, 2), (2, 0)]
    assert list(plan.inversion_pairs()) == [(0, 2), (2, 4)]


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
