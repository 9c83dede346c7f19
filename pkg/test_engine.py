#!/usr/bin/env python3
"""
Tests for the deterministic DDIM engine: step algebra, guidance and
sampling / inversion over zero and analytic predictors.
"""

import math
import time

import numpy as np
import pytest
import torch

from sts_lab.engine import (
    Condition,
    DomainToken,
    GuidanceConfig,
    LatentState,
    NoisePredictor,
    ZeroPredictor,
    cfg_combine,
    ddim_invert_step,
    ddim_step,
    guided_eps,
    invert,
    predict_x0,
    sample,
)
from sts_lab.oracle import GaussianMixture, GmmOraclePredictor
from sts_lab.schedule import build_schedule, plan_timesteps


class FrozenEpsPredictor(NoisePredictor):
    """Returns a fixed epsilon per timestep regardless of the state"""

    def __init__(self, table):
        self.table = table

    def predict(self, values, timestep, condition):
        return self.table[timestep].clone()


class CountingPredictor(NoisePredictor):
    def __init__(self):
        self.tokens = []

    def predict(self, values, timestep, condition):
        self.tokens.append(condition.domain_token)
        return torch.full_like(values, float(condition.domain_token))


@pytest.fixture
def schedule():
    return build_schedule(1000, 1e-4, 0.02)


def test_predict_x0_noiseless_identity():
    x = torch.randn(4, 3, dtype=torch.float64)
    assert torch.equal(predict_x0(x, torch.zeros_like(x), 1.0), x)


def test_predict_x0_hand_value():
    out = predict_x0(torch.tensor([1.0], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64), 0.25)
    assert float(out) == pytest.approx((1 - math.sqrt(0.75)) / 0.5, abs=1e-12)
    assert float(out) == pytest.approx(0.26794919, abs=1e-8)


def test_predict_x0_inverts_forward_noising():
    x0 = torch.randn(8, 5, dtype=torch.float64)
    noise = torch.randn(8, 5, dtype=torch.float64)
    abar = 0.37
    x_t = math.sqrt(abar) * x0 + math.sqrt(1 - abar) * noise
    torch.testing.assert_close(predict_x0(x_t, noise, abar), x0, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("abar", [0.0, -0.1, 1.5])
def test_predict_x0_rejects_out_of_range(abar):
    with pytest.raises(ValueError):
        predict_x0(torch.ones(1), torch.ones(1), abar)


def test_ddim_step_zero_eps_scales():
    x = torch.randn(3, 2, dtype=torch.float64)
    out = ddim_step(x, torch.zeros_like(x), 0.3, 0.6)
    torch.testing.assert_close(out, math.sqrt(0.6 / 0.3) * x)


def test_ddim_step_final_collapse():
    x, eps = torch.randn(5, dtype=torch.float64), torch.randn(5, dtype=torch.float64)
    torch.testing.assert_close(ddim_step(x, eps, 0.4, 1.0), predict_x0(x, eps, 0.4))


def test_ddim_step_hand_value():
    out = ddim_step(torch.tensor([1.0], dtype=torch.float64), torch.tensor([0.5], dtype=torch.float64), 0.25, 0.5)
    expected = math.sqrt(0.5) * (1 - math.sqrt(0.75) * 0.5) / 0.5 + math.sqrt(0.5) * 0.5
    assert float(out) == pytest.approx(expected, abs=1e-12)


def test_ddim_step_rejects_wrong_order():
    with pytest.raises(ValueError):
        ddim_step(torch.ones(1), torch.ones(1), 0.5, 0.4)
    with pytest.raises(ValueError):
        ddim_invert_step(torch.ones(1), torch.ones(1), 0.4, 0.5)


def test_invert_step_zero_eps_scales():
    x = torch.randn(3, 2, dtype=torch.float64)
    torch.testing.assert_close(ddim_invert_step(x, torch.zeros_like(x), 0.6, 0.3), math.sqrt(0.3 / 0.6) * x)


def test_step_inverse_identity_property():
    """ddim_step undoes ddim_invert_step for frozen eps, 1000 random draws"""
    start = time.time()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        a_t, a_next = sorted(rng.uniform(1e-3, 1.0, size=2), reverse=True)
        x = torch.from_numpy(rng.normal(size=(4,)))
        eps = torch.from_numpy(rng.normal(size=(4,)))
        back = ddim_step(ddim_invert_step(x, eps, a_t, a_next), eps, a_next, a_t)
        worst = max(worst, float((back - x).norm() / x.norm()))
    assert worst < 1e-9
    assert time.time() - start < 10


def test_cfg_combine_identities():
    u, c = torch.randn(6), torch.randn(6)
    assert torch.equal(cfg_combine(u, c, 1.0), c)
    assert torch.equal(cfg_combine(u, c, 0.0), u)
    assert float(cfg_combine(torch.tensor([0.0]), torch.tensor([1.0]), 5.0)) == 5.0
    with pytest.raises(ValueError):
        cfg_combine(torch.zeros(2), torch.zeros(3), 2.0)


def test_guided_eps_skips_uncond_at_omega_one():
    predictor = CountingPredictor()
    x = torch.zeros(2, 3)
    guided_eps(predictor, x, 10, GuidanceConfig(1.0, Condition(DomainToken.TARGET)))
    assert predictor.tokens == [DomainToken.TARGET]
    out = guided_eps(predictor, x, 10, GuidanceConfig(3.0, Condition(DomainToken.TARGET)))
    assert predictor.tokens[-1] == DomainToken.NULL
    torch.testing.assert_close(out, torch.full_like(x, 2.0 + 3.0 * (1.0 - 2.0)))


def test_guidance_rejects_negative_scale():
    with pytest.raises(ValueError):
        GuidanceConfig(-1.0, Condition(DomainToken.SOURCE))


def test_sample_zero_predictor_telescopes(schedule):
    plan = plan_timesteps(schedule, 20)
    seed = LatentState(torch.randn(16, 2, dtype=torch.float64), plan.final_step)
    out = sample(seed, ZeroPredictor(), plan, GuidanceConfig(5.0, Condition(DomainToken.TARGET)), schedule).final
    assert out.timestep == 0
    torch.testing.assert_close(out.values, seed.values / math.sqrt(schedule.alpha_bar(1000)), rtol=1e-10, atol=0)


def test_invert_zero_predictor(schedule):
    plan = plan_timesteps(schedule, 20)
    x0 = torch.randn(16, 2, dtype=torch.float64)
    seed = invert(LatentState(x0, 0), ZeroPredictor(), plan, Condition(DomainToken.SOURCE), schedule)
    assert seed.timestep == 1000
    torch.testing.assert_close(seed.values, math.sqrt(schedule.alpha_bar(1000)) * x0, rtol=1e-10, atol=0)


def test_sample_rejects_timestep_mismatch(schedule):
    plan = plan_timesteps(schedule, 20)
    with pytest.raises(ValueError):
        sample(LatentState(torch.zeros(1, 2), 999), ZeroPredictor(), plan,
               GuidanceConfig(1.0, Condition(DomainToken.TARGET)), schedule)


def test_timesteps_beyond_the_schedule_are_rejected(schedule):
    plan = plan_timesteps(schedule, 20)
    beyond = LatentState(torch.zeros(1, 2), 1001)
    with pytest.raises(ValueError, match="outside"):
        sample(beyond, ZeroPredictor(), plan, GuidanceConfig(1.0, Condition(DomainToken.TARGET)), schedule)
    with pytest.raises(ValueError, match="outside"):
        invert(beyond, ZeroPredictor(), plan, Condition(DomainToken.SOURCE), schedule)
    with pytest.raises(ValueError, match="outside"):
        LatentState(torch.zeros(1, 2), 1000).check_range(999)
    LatentState(torch.zeros(1, 2), 1000).check_range(1000)


def test_sample_returns_intermediates_on_request(schedule):
    plan = plan_timesteps(schedule, 5)
    seed = LatentState(torch.randn(2, 3, dtype=torch.float64), plan.final_step)
    guidance = GuidanceConfig(1.0, Condition(DomainToken.TARGET))
    traj = sample(seed, ZeroPredictor(), plan, guidance, schedule, return_intermediates=True)
    assert [s.timestep for s in traj.states] == [800, 600, 400, 200, 0]
    assert sample(seed, ZeroPredictor(), plan, guidance, schedule).states == []


def test_frozen_eps_round_trip_is_exact(schedule):
    """invert then sample with the same eps per step recovers x0"""
    plan = plan_timesteps(schedule, 20)
    generator = torch.Generator().manual_seed(3)
    table = {t: torch.randn(8, 4, generator=generator, dtype=torch.float64) for t in plan.steps}
    predictor = FrozenEpsPredictor(table)
    x0 = torch.randn(8, 4, generator=generator, dtype=torch.float64)

    seed = invert(LatentState(x0, 0), predictor, plan, Condition(DomainToken.SOURCE), schedule)
    back = sample(seed, predictor, plan, GuidanceConfig(1.0, Condition(DomainToken.SOURCE)), schedule)
    assert float((back.final.values - x0).norm() / x0.norm()) < 1e-9


def test_spatial_map_shape_is_checked():
    predictor = ZeroPredictor()
    x = torch.zeros(2, 3, 8, 8)
    predictor(x, 5, Condition(DomainToken.SOURCE, torch.zeros(2, 1, 8, 8)))
    with pytest.raises(ValueError):
        predictor(x, 5, Condition(DomainToken.SOURCE, torch.zeros(2, 1, 4, 4)))
    with pytest.raises(ValueError):
        predictor(torch.zeros(2, 3), 5, Condition(DomainToken.SOURCE, torch.zeros(2, 1, 8, 8)))


def test_latent_state_rejects_non_finite():
    with pytest.raises(ValueError):
        LatentState(torch.tensor([float("nan")]), 0)
    with pytest.raises(ValueError):
        LatentState(torch.zeros(1), -1)


def test_sampling_is_deterministic(schedule):
    plan = plan_timesteps(schedule, 20)
    oracle = GmmOraclePredictor.unconditional(GaussianMixture.create([0.5, 0.5], [[2, 0], [-2, 0]], [[0.3, 0.3]] * 2),
                                              schedule)
    seed = LatentState(torch.randn(32, 2, generator=torch.Generator().manual_seed(0), dtype=torch.float64), 1000)
    guidance = GuidanceConfig(1.0, Condition(DomainToken.SOURCE))
    a = sample(seed, oracle, plan, guidance, schedule).final.values
    b = sample(seed, oracle, plan, guidance, schedule).final.values
    assert torch.equal(a, b)


def test_single_gaussian_sampling_matches_marginal(schedule):
    """Endpoints of N(0, I) seeds land on N(mu, I): mean within 3 standard errors"""
    plan = plan_timesteps(schedule, 20)
    mu = torch.tensor([1.0, -1.0], dtype=torch.float64)
    oracle = GmmOraclePredictor.unconditional(GaussianMixture.isotropic(mu), schedule)
    seeds = torch.randn(2048, 2, generator=torch.Generator().manual_seed(11), dtype=torch.float64)
    out = sample(LatentState(seeds, 1000), oracle, plan, GuidanceConfig(1.0, Condition(DomainToken.SOURCE)),
                 schedule).final.values
    se = out.std(dim=0) / math.sqrt(len(out))
    assert torch.all((out.mean(dim=0) - mu).abs() < 3 * se)


def _round_trip_error(schedule, steps: int, x0: torch.Tensor, oracle) -> float:
    plan = plan_timesteps(schedule, steps)
    condition = Condition(DomainToken.SOURCE)
    seed = invert(LatentState(x0, 0), oracle, plan, condition, schedule)
    back = sample(seed, oracle, plan, GuidanceConfig(1.0, condition), schedule).final.values
    errors = (back - x0).norm(dim=1) / x0.norm(dim=1)
    return float(errors.median())


def test_analytic_round_trip_and_convergence(schedule):
    start = time.time()
    oracle = GmmOraclePredictor.unconditional(GaussianMixture.isotropic([0.0, 0.0]), schedule)
    x0 = torch.randn(512, 2, generator=torch.Generator().manual_seed(5), dtype=torch.float64)

    assert _round_trip_error(schedule, 50, x0, oracle) <= 0.05
    errors = [_round_trip_error(schedule, s, x0, oracle) for s in (10, 20, 50, 100)]
    for coarse, fine in zip(errors, errors[1:]):
        assert fine <= coarse * 1.1
    assert time.time() - start < 120


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
