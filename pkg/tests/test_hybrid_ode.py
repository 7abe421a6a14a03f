import numpy as np
import pytest
from numpy.testing import assert_allclose

import perimap as pm
from perimap.exceptions import NoReturnError


def logistic_radius(r0, t):
    """Closed-form solution of r' = r(1 - r)."""
    return r0 * np.exp(t) / (1.0 + r0 * (np.exp(t) - 1.0))


@pytest.fixture()
def frozen(e3):
    return pm.HybridSystem(
        dim=2, X=lambda x: np.zeros_like(np.asarray(x, float)),
        g=lambda t, x, e: np.zeros_like(np.asarray(x, float)),
        Delta=e3.Delta, H=e3.H, D=e3.D, D_inverse=e3.D_inverse,
        T_g=0.8, r1=0.5)


class TestFlow:
    def test_half_turn_on_cycle(self, e3):
        res = pm.flow(e3, 0.0, [1.0, 0.0], 0.0, t_end=0.5)
        assert np.linalg.norm(res.end_state - [-1.0, 0.0]) <= 1e-9
        assert not res.event_hit

    def test_event_return_after_full_turn(self, e3):
        res = pm.flow(e3, 0.3, [1.0, 0.0], 0.0, event=True)
        assert res.event_hit
        assert abs(res.end_time - 1.3) <= 1e-9
        assert np.linalg.norm(res.end_state - [1.0, 0.0]) <= 1e-9

    def test_off_cycle_radius_logistic(self, e3):
        res = pm.flow(e3, 0.0, [1.3, 0.0], 0.0, t_end=1.0,
                      rtol=1e-12, atol=1e-14)
        assert abs(np.linalg.norm(res.end_state) - logistic_radius(1.3, 1.0)) <= 1e-10

    def test_frozen_flow(self, frozen):
        res = pm.flow(frozen, 0.0, [0.3, 0.7], 0.123, t_end=5.0)
        assert np.array_equal(res.end_state, [0.3, 0.7])

    def test_no_return_raises(self, frozen):
        with pytest.raises(NoReturnError):
            pm.flow(frozen, 0.0, [0.3, 0.7], 0.0, event=True, max_time=2.0)

    def test_event_localization_tight(self, e3):
        res = pm.flow(e3, 0.0, [1.0, 0.0], 0.0, event=True,
                      rtol=1e-12, atol=1e-14)
        x = res.end_state
        assert abs(float(e3.H(x[None, :])[0])) <= 1e-12
        # re-integration consistency against the linearized prediction
        rate = float(e3.X(x[None, :])[0, 1])
        res2 = pm.flow(e3, res.end_time, x, 0.0, t_end=res.end_time + 1e-10)
        assert abs(res2.end_state[1] - (x[1] + 1e-10 * rate)) <= 1e-11

    def test_semigroup_at_eps0(self, e3):
        v0 = np.array([1.1, 0.2])
        mid = pm.flow(e3, 0.0, v0, 0.0, t_end=0.37).end_state
        two = pm.flow(e3, 0.37, mid, 0.0, t_end=0.9).end_state
        one = pm.flow(e3, 0.0, v0, 0.0, t_end=0.9).end_state
        assert np.linalg.norm(two - one) <= 1e-9

    def test_forced_flow_periodic_in_tau(self, e3):
        v0 = np.array([1.1, 0.2])
        eps = 0.05
        a = pm.flow(e3, 0.3, v0, eps, t_end=0.85).end_state
        b = pm.flow(e3, 0.3 + 0.8, v0, eps, t_end=0.85 + 0.8).end_state
        assert np.linalg.norm(a - b) <= 1e-9

    def test_grazing_flagged(self, e3):
        graze = pm.HybridSystem(
            dim=2, X=e3.X, g=e3.g, Delta=e3.Delta,
            H=lambda x: np.asarray(x, float)[..., 1] - 1.0,
            D=e3.D, D_inverse=e3.D_inverse, T_g=0.8, r1=0.5)
        res = pm.flow(graze, 0.0, [1.0, 0.0], 0.0, event=True, max_time=2.0,
                      on_no_return="flag")
        assert not res.event_hit
        assert res.grazing

    def test_batch_shifted_times(self, e3):
        taus = np.array([0.0, 0.1, 0.55])
        vs = np.tile([1.0, 0.0], (3, 1))
        res = pm.flow_batch(e3, taus, vs, 0.0, event=True)
        assert_allclose(res.end_times, taus + 1.0, atol=1e-9)


class TestPredicates:
    def test_transversality_is_2pi(self, e3):
        assert abs(pm.check_transversality(e3) - 2 * np.pi) <= 1e-6

    def test_tangent_field_flagged(self, e3):
        tangent = pm.HybridSystem(
            dim=2,
            X=lambda x: np.stack([np.ones_like(np.asarray(x, float)[..., 0]),
                                  np.zeros_like(np.asarray(x, float)[..., 0])],
                                 axis=-1),
            g=e3.g, Delta=e3.Delta, H=e3.H, D=e3.D, D_inverse=e3.D_inverse,
            T_g=0.8, r1=0.5)
        assert abs(pm.check_transversality(tangent)) <= 1e-10

    def test_transversality_scaling(self, e3):
        scaled = pm.HybridSystem(
            dim=2, X=e3.X, g=e3.g, Delta=e3.Delta,
            H=lambda x: 7.5 * np.asarray(x, float)[..., 1],
            D=e3.D, D_inverse=e3.D_inverse, T_g=0.8, r1=0.5)
        a = pm.check_transversality(e3)
        b = pm.check_transversality(scaled)
        assert np.sign(a) == np.sign(b)
        assert abs(b - 7.5 * a) <= 1e-4

    def test_forcing_period_builtin(self, e3):
        assert pm.check_forcing_period(e3, 32, 0) <= 1e-14

    def test_forcing_period_violation(self, e3):
        drift = pm.HybridSystem(
            dim=2, X=e3.X,
            g=lambda t, x, e: np.stack(
                [np.cos(2 * np.pi * np.asarray(t, float) / 0.8) + 0.1 * np.asarray(t, float),
                 np.zeros_like(np.asarray(t, float))], axis=-1)
            + np.zeros_like(np.asarray(x, float)),
            Delta=e3.Delta, H=e3.H, D=e3.D, D_inverse=e3.D_inverse,
            T_g=0.8, r1=0.5)
        assert pm.check_forcing_period(drift, 32, 0) > 1e-3

    def test_chart_lies_in_S(self, e3):
        us = np.linspace(-0.5, 0.5, 11)[:, None]
        assert np.max(np.abs(e3.H(e3.D(us)))) == 0.0
        assert_allclose(e3.D_inverse(e3.D(us)), us, atol=1e-15)


class TestSimulateHybrid:
    def test_jump_applied_and_contracts(self, e3):
        segments, jumps = pm.simulate_hybrid(e3, 0.0, [1.4, 0.0], 0.0, 2.5)
        assert len(jumps) == 2
        # after each return the radial deviation shrinks by roughly kappa/e
        r_first = abs(np.linalg.norm(jumps[0][1]) - 1.0)
        r_second = abs(np.linalg.norm(jumps[1][1]) - 1.0)
        assert r_second < r_first

    def test_segments_continuous_in_time(self, e3):
        segments, _ = pm.simulate_hybrid(e3, 0.2, [1.2, 0.0], 0.01, 2.0)
        t_prev = 0.2
        for ts, states in segments:
            assert ts[0] >= t_prev - 1e-9
            t_prev = ts[-1]
        assert abs(t_prev - 2.2) <= 1e-9


class TestJson:
    def test_builtin_roundtrip(self):
        sys_ = pm.hybrid_from_json({"name": "polar-hybrid",
                                    "params": {"kappa": 0.25, "T_g": 1.0}})
        assert sys_.T_g == 1.0

    def test_unknown_param(self):
        with pytest.raises(pm.ConfigError):
            pm.hybrid_from_json({"name": "polar-hybrid", "params": {"x": 1}})
