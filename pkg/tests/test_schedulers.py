import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lerac.errors import ValidationError
from lerac.presets import TABLE_PRESETS
from lerac.schedulers import (CBSConfig, LeRaCConfig, PlateauPolicy, PlateauTracker,
                              RateSchedule, assign_initial_rates, cbs_sigma_at,
                              layer_rates, plateau_step, rate_at)


def ramp(start, target=1e-1, k=5, rule="exponential"):
    return RateSchedule([start], target, k, 10.0, rule)


class TestInitialRates:
    def test_three_layers_log_midpoint(self):
        sched = assign_initial_rates(3, LeRaCConfig(eta_base=1e-1, eta_first=1e-1, eta_last=1e-8))
        first, mid, last = sched.initial_rates
        assert first == 1e-1 and last == 1e-8
        assert abs(mid - 10 ** -4.5) / 10 ** -4.5 < 1e-12
        assert mid == pytest.approx(3.1623e-5, rel=1e-4)

    def test_single_layer(self):
        assert assign_initial_rates(1, LeRaCConfig(eta_base=0.3, eta_last=1e-4)).initial_rates == [0.3]

    def test_resnet18_preset_range(self):
        assert TABLE_PRESETS["resnet18"].eta_range == (1e-1, 1e-8)

    def test_first_defaults_to_base(self):
        assert LeRaCConfig(eta_base=0.02).eta_first == 0.02

    @pytest.mark.parametrize("kwargs", [
        dict(eta_base=0.1, eta_first=1e-3, eta_last=1e-2),
        dict(eta_base=0.1, eta_first=0.5),
        dict(eta_base=0.1, k=0),
        dict(eta_base=0.1, c=1.0),
        dict(eta_base=0.1, rule="cosine"),
        dict(eta_base=-1.0),
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValidationError):
            LeRaCConfig(**kwargs)


class TestRateAt:
    def test_exponential_start(self):
        assert rate_at(ramp(1e-8), 1, 0) == 1e-8

    def test_exponential_end(self):
        assert rate_at(ramp(1e-8), 1, 5) == 1e-1

    def test_exponential_interior(self):
        assert abs(rate_at(ramp(1e-8), 1, 2) - 10 ** -5.2) / 10 ** -5.2 < 1e-12
        assert rate_at(ramp(1e-8), 1, 2) == pytest.approx(6.3096e-6, rel=1e-4)

    def test_linear_interior(self):
        got = rate_at(ramp(1e-8, rule="linear"), 1, 2)
        assert got == pytest.approx(1e-8 + 0.4 * (1e-1 - 1e-8), rel=1e-15)
        assert got == pytest.approx(4.0e-2, rel=1e-6)

    def test_clamped_past_horizon(self):
        assert rate_at(ramp(1e-8), 1, 50) == 1e-1

    def test_layer_out_of_range(self):
        with pytest.raises(ValidationError):
            rate_at(ramp(1e-8), 2, 0)
        with pytest.raises(ValidationError):
            rate_at(ramp(1e-8), 0, 0)

    def test_degenerate_schedule_is_constant(self):
        sched = assign_initial_rates(6, LeRaCConfig.conventional(0.05, k=4))
        for l in range(8):
            assert layer_rates(sched, l) == [0.05] * 6


configs = st.builds(
    lambda n, base_exp, first_gap, span, k, rule: (
        n, LeRaCConfig(eta_base=10.0 ** base_exp,
                       eta_first=10.0 ** (base_exp - first_gap),
                       eta_last=10.0 ** (base_exp - first_gap - span),
                       k=k, rule=rule)),
    st.integers(1, 20), st.floats(-5, 0), st.floats(0, 2), st.floats(0, 8),
    st.integers(1, 10), st.sampled_from(["exponential", "linear"]),
)


class TestScheduleProperties:
    @settings(max_examples=300, deadline=None)
    @given(configs)
    def test_order_monotonicity_and_convergence(self, case):
        n, cfg = case
        sched = assign_initial_rates(n, cfg)
        prev = None
        for l in range(cfg.k + 1):
            rates = layer_rates(sched, l)
            assert all(a >= b for a, b in zip(rates, rates[1:]))
            if prev is not None:
                assert all(r >= p for r, p in zip(rates, prev))
            prev = rates
        assert layer_rates(sched, 0) == sched.initial_rates
        for r in layer_rates(sched, cfg.k):
            assert abs(r - cfg.eta_base) / cfg.eta_base < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 5), st.floats(0.05, 1), st.integers(1, 10), st.integers(0, 200))
    def test_sigma_closed_form_and_non_increasing(self, sigma0, d, u, epoch):
        cfg = CBSConfig(sigma0, d, u)
        assert cbs_sigma_at(cfg, epoch) == sigma0 * d ** (epoch // u)
        assert cbs_sigma_at(cfg, epoch + 1) <= cbs_sigma_at(cfg, epoch)
        assert 0 < cbs_sigma_at(cfg, epoch) <= sigma0


class TestCBS:
    @pytest.mark.parametrize("epoch,want", [(0, 1.0), (2, 0.9), (5, 0.81)])
    def test_table_values(self, epoch, want):
        assert cbs_sigma_at(CBSConfig(1.0, 0.9, 2), epoch) == pytest.approx(want, rel=1e-12)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            CBSConfig(sigma0=0.0)
        with pytest.raises(ValidationError):
            CBSConfig(d=1.5)
        with pytest.raises(ValidationError):
            CBSConfig(kernel_size=4)


class TestPlateau:
    def test_decreasing_history(self):
        assert plateau_step(PlateauPolicy(), [5, 4, 3, 2, 1], 0.1) == (0.1, False)

    def test_flat_history_reduces_once(self):
        rate, stop = plateau_step(PlateauPolicy(patience=3), [1.0] * 4, 1e-1)
        assert rate == pytest.approx(1e-2, rel=1e-15) and not stop

    def test_flat_history_stops(self):
        policy = PlateauPolicy()
        assert plateau_step(policy, [1.0] * (policy.early_stop_patience + 1), 0.1)[1]
        assert not plateau_step(policy, [1.0] * policy.early_stop_patience, 0.1)[1]

    def test_small_improvements_do_not_count(self):
        policy = PlateauPolicy(patience=2, min_delta=0.01)
        rate, _ = plateau_step(policy, [1.0, 0.999, 0.998], 1.0)
        assert rate == pytest.approx(0.1)

    def test_tracker_resets_after_reduction(self):
        tracker = PlateauTracker(PlateauPolicy(patience=2, early_stop_patience=100))
        events = [tracker.step(x)[0] for x in [1, 1, 1, 1, 1]]
        assert events == [False, False, True, False, True]
        assert tracker.scale == pytest.approx(0.01)

    def test_empty_history(self):
        with pytest.raises(ValidationError):
            plateau_step(PlateauPolicy(), [], 0.1)

    def test_defaults(self):
        p = PlateauPolicy()
        assert (p.factor, p.patience, p.min_delta, p.early_stop_patience) == (0.1, 5, 1e-4, 12)
        assert math.isclose(p.factor * 0.3, 0.03)
