import itertools

import pytest
from hypothesis import given, strategies as st

from xfertune.core import (
    Action,
    Bounds,
    FeatureScaler,
    MiObservation,
    StateWindow,
    TransferParams,
    apply_action,
    featurize,
)


def obs(ts=0.0, throughput=1e9, plr=0.0, rtt=0.03, energy=10.0, cc=4, p=4, score=0.0):
    return MiObservation(ts, throughput, plr, rtt, energy, cc, p, score)


class TestApplyAction:
    def test_reference_step_up(self):
        # (7,7) + Inc1 -> (8,8)
        out = apply_action(TransferParams(7, 7), Action.INC1, Bounds())
        assert out == TransferParams(8, 8)

    def test_hold_is_identity(self):
        assert apply_action(TransferParams(4, 4), Action.HOLD, Bounds()) == TransferParams(4, 4)

    def test_clamp_at_lower_bound(self):
        out = apply_action(TransferParams(1, 1), Action.DEC2, Bounds())
        assert out == TransferParams(1, 1)

    def test_clamp_at_upper_bound(self):
        bounds = Bounds(cc_max=8, p_max=8, n_streams_cap=64)
        assert apply_action(TransferParams(7, 7), Action.INC2, bounds) == TransferParams(8, 8)

    def test_exhaustive_grid_never_violates_bounds(self):
        bounds = Bounds(cc_min=1, cc_max=16, p_min=1, p_max=16, n_streams_cap=200)
        for cc, p, action in itertools.product(range(1, 17), range(1, 17), Action):
            params = TransferParams(cc, p)
            if not bounds.contains(params):
                continue
            out = apply_action(params, action, bounds)
            assert bounds.contains(out), (params, action, out)

    def test_inc_then_dec_roundtrip_without_clamp(self):
        bounds = Bounds()
        start = TransferParams(5, 5)
        up = apply_action(start, Action.INC1, bounds)
        assert apply_action(up, Action.DEC1, bounds) == start

    def test_cap_repair_decrements_jointly(self):
        bounds = Bounds(cc_max=16, p_max=16, n_streams_cap=36)
        out = apply_action(TransferParams(6, 6), Action.INC1, bounds)
        assert out.n_streams <= 36
        assert bounds.contains(out)

    def test_action_deltas_match_contract(self):
        deltas = {Action.HOLD: 0, Action.INC1: 1, Action.DEC1: -1, Action.INC2: 2, Action.DEC2: -2}
        for action, d in deltas.items():
            out = apply_action(TransferParams(8, 8), action, Bounds())
            assert (out.cc - 8, out.p - 8) == (d, d)


class TestBounds:
    def test_invalid_bounds_rejected(self):
        with pytest.raises(ValueError):
            Bounds(cc_min=5, cc_max=2)
        with pytest.raises(ValueError):
            Bounds(cc_min=0)
        with pytest.raises(ValueError):
            Bounds(n_streams_cap=0)


class TestObservation:
    def test_field_validation(self):
        with pytest.raises(ValueError):
            obs(throughput=-1.0)
        with pytest.raises(ValueError):
            obs(plr=1.5)
        with pytest.raises(ValueError):
            obs(rtt=0.0)
        with pytest.raises(ValueError):
            obs(energy=-0.1)


class TestFeaturize:
    def test_constant_rtt_gives_zero_gradient(self):
        history = [obs(ts=i, rtt=0.03) for i in range(6)]
        window = featurize(history, 0.03, 5)
        assert all(f.rtt_gradient == 0.0 for f in window.features)

    def test_ratio_is_one_at_session_minimum(self):
        history = [obs(rtt=0.03)]
        window = featurize(history, 0.03, 3)
        assert window.latest.rtt_ratio == 1.0

    def test_gradient_thirty_to_thirtythree_ms(self):
        history = [obs(ts=0, rtt=0.030), obs(ts=1, rtt=0.033)]
        window = featurize(history, 0.030, 2)
        assert window.latest.rtt_gradient == pytest.approx((0.033 - 0.030) / 0.030, rel=1e-12)
        assert window.latest.rtt_gradient == pytest.approx(0.1, rel=1e-9)

    def test_short_history_pads_with_earliest(self):
        history = [obs(ts=0, rtt=0.03, cc=2, p=2), obs(ts=1, rtt=0.04, cc=3, p=3)]
        window = featurize(history, 0.03, 5)
        assert len(window) == 5
        assert window.features[0] == window.features[1] == window.features[2]
        assert window.features[0].cc == 2
        assert window.latest.cc == 3

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            featurize([], 0.03, 5)

    @given(
        rtts=st.lists(st.floats(min_value=0.001, max_value=1.0), min_size=1, max_size=12),
        n=st.integers(min_value=1, max_value=8),
    )
    def test_window_length_and_ratio_invariant(self, rtts, n):
        history = [obs(ts=i, rtt=r) for i, r in enumerate(rtts)]
        session_min = min(rtts)
        window = featurize(history, session_min, n)
        assert len(window) == n
        assert all(f.rtt_ratio >= 1.0 for f in window.features)


class TestStateWindow:
    def test_advanced_keeps_length_and_order(self):
        history = [obs(ts=i, cc=i + 1, p=i + 1, rtt=0.03) for i in range(5)]
        window = featurize(history, 0.03, 5)
        new_feat = window.latest
        out = window.advanced(new_feat)
        assert len(out) == 5
        assert out.features[-1] == new_feat
        assert out.features[0] == window.features[1]

    def test_matrix_shape(self):
        history = [obs(rtt=0.03)]
        window = featurize(history, 0.03, 4)
        assert window.as_matrix().shape == (4, 5)


class TestFeatureScaler:
    def test_scale_window_flattens(self):
        scaler = FeatureScaler.from_bounds(Bounds())
        history = [obs(rtt=0.03)]
        window = featurize(history, 0.03, 5)
        assert scaler.scale_window(window).shape == (25,)

    def test_degenerate_span_maps_to_zero(self):
        scaler = FeatureScaler(lo=(0.0,) * 5, hi=(0.0,) * 5)
        history = [obs(rtt=0.03, plr=0.0)]
        window = featurize(history, 0.03, 1)
        assert scaler.scale_window(window).shape == (5,)
