import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xfertune.core import Action, Bounds, TransferParams
from xfertune.simnet import (
    EnergyConfig,
    EnvConfig,
    FlowState,
    LinkConfig,
    SyntheticEnv,
    aggregate_throughput,
    bg_sample,
    energy_per_mi,
    link_tick,
    mathis_throughput,
)


class TestMathis:
    def test_reference_value(self):
        # 1500 B, 50 ms, 1% loss, C=1 -> 2.4e6 bit/s
        got = mathis_throughput(1500, 0.05, 0.01, 1.0)
        oracle = (1500 * 8 / 0.05) * (1.0 / math.sqrt(0.01))
        assert got == pytest.approx(oracle, rel=1e-12)
        assert got == pytest.approx(2.4e6, rel=1e-9)

    def test_doubling_rtt_halves(self):
        a = mathis_throughput(1500, 0.02, 0.001, 1.0)
        b = mathis_throughput(1500, 0.04, 0.001, 1.0)
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_quadrupling_loss_halves(self):
        a = mathis_throughput(1500, 0.02, 0.01, 1.0)
        b = mathis_throughput(1500, 0.02, 0.04, 1.0)
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            mathis_throughput(1500, 0.02, 0.0, 1.0)
        with pytest.raises(ValueError):
            mathis_throughput(1500, 0.0, 0.01, 1.0)

    @given(
        rtt=st.floats(min_value=1e-3, max_value=1.0),
        loss=st.floats(min_value=1e-6, max_value=0.5),
        factor=st.floats(min_value=1.01, max_value=8.0),
    )
    def test_monotone_decreasing_in_rtt_and_loss(self, rtt, loss, factor):
        base = mathis_throughput(1500, rtt, loss, 1.0)
        assert mathis_throughput(1500, rtt * factor, loss, 1.0) < base
        assert mathis_throughput(1500, rtt, min(loss * factor, 0.99), 1.0) < base


class TestAggregate:
    def test_identical_streams_scale(self):
        single = mathis_throughput(1500, 0.03, 0.005, 1.0)
        agg = aggregate_throughput([(1500, 0.03, 0.005)] * 4, 1.0)
        assert agg == pytest.approx(4 * single, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_throughput([], 1.0)

    def test_mixed_losses(self):
        # losses 1% and 4%: second contributes half the first
        base = mathis_throughput(1500, 0.03, 0.01, 1.0)
        agg = aggregate_throughput([(1500, 0.03, 0.01), (1500, 0.03, 0.04)], 1.0)
        assert agg == pytest.approx(1.5 * base, rel=1e-12)


class TestBgSample:
    def test_single_level(self):
        cfg = LinkConfig(bg_levels=(0.0,))
        rng = np.random.default_rng(0)
        assert all(bg_sample(rng, cfg) == 0.0 for _ in range(20))

    def test_deterministic_with_seed(self):
        cfg = LinkConfig(bg_levels=(0.0, 5e9))
        a = [bg_sample(np.random.default_rng(7), cfg) for _ in range(1)]
        b = [bg_sample(np.random.default_rng(7), cfg) for _ in range(1)]
        assert a == b

    def test_two_level_frequency(self):
        cfg = LinkConfig(bg_levels=(0.0, 5e9))
        rng = np.random.default_rng(123)
        draws = [bg_sample(rng, cfg) for _ in range(10_000)]
        frac = sum(1 for d in draws if d == 5e9) / len(draws)
        assert abs(frac - 0.5) < 0.05


class TestEnergyPerMi:
    def test_zero_activity(self):
        assert energy_per_mi(0, 0.0, 0.0, 1.0, EnergyConfig()) == 0.0

    def test_reference_calibration(self):
        # 49 streams at 8.32 Gbit/s for one second is about 80 J
        ecfg = EnergyConfig(joule_per_stream_s=0.8, joule_per_gbit=4.9, retx_penalty=50.0)
        got = energy_per_mi(49, 8.32e9, 0.0, 1.0, ecfg)
        assert got == pytest.approx(0.8 * 49 + 4.9 * 8.32, rel=1e-12)
        assert got == pytest.approx(80.0, abs=0.05)

    def test_increasing_in_streams(self):
        ecfg = EnergyConfig()
        vals = [energy_per_mi(n, 5e9, 0.0, 1.0, ecfg) for n in range(1, 10)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestLinkTick:
    def test_uncongested_branch(self):
        cfg = LinkConfig(bg_levels=(0.0,))
        result = link_tick(cfg, EnergyConfig(), [FlowState(TransferParams(2, 2))], 0.0)
        assert result.loss == cfg.loss_floor
        assert result.rtt == cfg.base_rtt

    def test_congestion_branch_at_double_capacity(self):
        cfg = LinkConfig()
        # engineer offered load of exactly 2x capacity: 100 streams + bg
        flows = [FlowState(TransferParams(10, 10))]
        bg = 2 * cfg.capacity_b - 100 * cfg.per_stream_rate
        result = link_tick(cfg, EnergyConfig(), flows, bg)
        overload = (result.aggregate_offered - cfg.capacity_b) / cfg.capacity_b
        assert overload == pytest.approx(1.0, rel=1e-12)
        assert result.loss == pytest.approx(cfg.loss_floor + cfg.loss_kappa, rel=1e-9)
        assert result.rtt == pytest.approx(cfg.base_rtt * (1 + cfg.rtt_q), rel=1e-9)

    def test_symmetric_flows_get_identical_throughput(self):
        cfg = LinkConfig()
        flows = [FlowState(TransferParams(3, 3)), FlowState(TransferParams(3, 3))]
        result = link_tick(cfg, EnergyConfig(), flows, 1e9)
        t0, t1 = (o.throughput for o in result.observations)
        assert t0 == t1

    def test_conservation(self):
        cfg = LinkConfig()
        for bg in (0.0, 2e9, 9e9):
            for streams in (1, 16, 64, 200):
                flows = [FlowState(TransferParams(1, streams))]
                result = link_tick(cfg, EnergyConfig(), flows, bg)
                total = sum(o.throughput for o in result.observations) + result.bg_used
                assert total <= cfg.capacity_b * (1 + 1e-9)

    def test_cumulative_counters_nondecreasing(self):
        cfg = LinkConfig(bg_levels=(0.0,))
        flow = FlowState(TransferParams(4, 4))
        for _ in range(5):
            result = link_tick(cfg, EnergyConfig(), [flow], 0.0)
            new = result.flows[0]
            assert new.cumulative_bits >= flow.cumulative_bits
            assert new.cumulative_energy >= flow.cumulative_energy
            flow = new

    def test_unimodal_throughput_in_stream_count(self):
        cfg = LinkConfig()
        tputs = []
        for n in range(1, 120):
            result = link_tick(cfg, EnergyConfig(), [FlowState(TransferParams(1, n))], 0.0)
            tputs.append(result.observations[0].throughput)
        peak = tputs.index(max(tputs))
        assert all(b >= a - 1e-6 for a, b in zip(tputs[: peak + 1], tputs[1 : peak + 1]))
        assert all(b <= a + 1e-6 for a, b in zip(tputs[peak:], tputs[peak + 1 :]))

    def test_reference_operating_point(self):
        # 49 clean streams on the default link reproduce the reference
        # measurement: 8.33 Gbit/s at floor loss and base RTT.
        cfg = LinkConfig()
        result = link_tick(cfg, EnergyConfig(), [FlowState(TransferParams(7, 7))], 0.0)
        o = result.observations[0]
        assert o.throughput == pytest.approx(49 * cfg.per_stream_rate, rel=1e-12)
        assert o.plr == cfg.loss_floor
        assert o.mean_rtt == cfg.base_rtt

    def test_validation(self):
        cfg = LinkConfig()
        with pytest.raises(ValueError):
            link_tick(cfg, EnergyConfig(), [], 0.0)
        with pytest.raises(ValueError):
            link_tick(cfg, EnergyConfig(), [FlowState(TransferParams(1, 1))], -1.0)


class TestSyntheticEnv:
    def test_deterministic_under_seed(self):
        def run():
            env = SyntheticEnv(seed=5)
            window, obs = env.reset()
            out = []
            for i in range(40):
                action = Action(i % 5)
                window, obs, done = env.step(action)
                out.append((obs.throughput, obs.plr, obs.mean_rtt, obs.energy))
            return out

        assert run() == run()

    def test_horizon_terminates_episode(self):
        env = SyntheticEnv(env_cfg=EnvConfig(horizon=4), seed=0)
        env.reset()
        done = False
        steps = 0
        while not done:
            _, _, done = env.step(Action.HOLD)
            steps += 1
        assert steps == 4

    def test_window_has_history_length(self):
        env = SyntheticEnv(env_cfg=EnvConfig(history_n=7), seed=0)
        window, _ = env.reset()
        assert len(window) == 7

    def test_bg_schedule_override(self):
        env = SyntheticEnv(
            env_cfg=EnvConfig(horizon=20),
            seed=0,
            bg_schedule=[(0, 0.0), (5, 9.5e9)],
        )
        env.reset()
        plrs = []
        for _ in range(10):
            _, obs, _ = env.step(Action.HOLD)
            plrs.append(obs.plr)
        assert plrs[0] == LinkConfig().loss_floor
        assert plrs[-1] > LinkConfig().loss_floor

    def test_random_init_stays_in_bounds(self):
        bounds = Bounds(cc_max=9, p_max=9, n_streams_cap=81)
        env = SyntheticEnv(bounds=bounds, env_cfg=EnvConfig(random_init=True), seed=3)
        seen = set()
        for _ in range(30):
            env.reset()
            assert bounds.contains(env.params)
            seen.add(env.params.cc)
        assert len(seen) > 3
