import numpy as np
import pytest
from numpy.testing import assert_allclose

import perimap as pm


def logistic_P(u, kappa=0.5):
    """Closed-form reduced return map of the polar hybrid system."""
    w = 1.0 + kappa * u
    e = np.e
    return w * e / (1.0 + w * (e - 1.0)) - 1.0


class TestTimeToReturn:
    def test_unit_lag_on_cycle(self, handle):
        assert abs(pm.time_to_return(handle, 0.3, [1.0, 0.0], 0.0) - 1.3) <= 1e-9

    def test_lag_tau_independent_at_eps0(self, handle):
        # T0(tau, x) = tau + T0(0, x)
        lag0 = pm.time_to_return(handle, 0.0, [1.1, 0.0], 0.0)
        worst = 0.0
        for tau in (0.17, 0.5, 3.4):
            lag = pm.time_to_return(handle, tau, [1.1, 0.0], 0.0) - tau
            worst = max(worst, abs(lag - lag0))
        assert worst <= 1e-9

    def test_lag_radius_independent(self, handle):
        # theta decouples: the return lag is exactly 1 for any radius
        assert abs(pm.time_to_return(handle, 0.0, [1.2, 0.0], 0.0) - 1.0) <= 1e-9


class TestPEps:
    def test_cycle_is_fixed(self, handle):
        tbar, ubar = pm.P_eps(handle, 0.4, [0.0], 0.0)
        assert abs(tbar - 1.4) <= 1e-9
        assert np.max(np.abs(ubar)) <= 1e-10

    def test_logistic_closed_form(self, handle):
        tbar, ubar = pm.P_eps(handle, 0.0, [0.2], 0.0)
        assert abs(ubar[0] - logistic_P(0.2)) <= 1e-8
        assert abs(tbar - 1.0) <= 1e-9

    def test_forced_shift_identity(self, handle):
        # P_eps(tau + T_g, u) advances the time by T_g and repeats u
        for eps in (1e-3, 1e-2):
            t1, u1 = pm.P_eps(handle, 0.3, [0.1], eps)
            t2, u2 = pm.P_eps(handle, 0.3 + 0.8, [0.1], eps)
            assert abs((t2 - t1) - 0.8) <= 1e-8
            assert np.max(np.abs(u2 - u1)) <= 1e-8


class TestPReduced:
    def test_fixed_point_zero(self, handle):
        assert np.max(np.abs(pm.P_reduced(handle, [0.0]))) <= 1e-10

    @pytest.mark.parametrize("u", [0.2, -0.2])
    def test_closed_form(self, handle, u):
        got = pm.P_reduced(handle, [u])[0]
        want = logistic_P(u)
        assert abs(got - want) <= 1e-8
        assert abs(got) < abs(u)  # contraction toward the cycle

    def test_tau_independence(self, handle):
        base = pm.P_eps(handle, 0.0, [0.15], 0.0)[1]
        for tau in (0.25, 0.61, 1.9):
            other = pm.P_eps(handle, tau, [0.15], 0.0)[1]
            assert np.max(np.abs(other - base)) <= 1e-9


class TestReturnTimeShift:
    def test_return_time_shifts_by_forcing_period(self, handle):
        worst = 0.0
        for eps in (1e-3, 1e-2):
            for tau in (0.0, 0.3, 0.77, 1.2):
                t0 = pm.time_to_return(handle, tau, [1.05, 0.0], eps)
                tp = pm.time_to_return(handle, tau + 0.8, [1.05, 0.0], eps)
                tm = pm.time_to_return(handle, tau - 0.8, [1.05, 0.0], eps)
                worst = max(worst, abs(tp - t0 - 0.8), abs(tm - t0 + 0.8))
        assert worst <= 1e-8


class TestWrappedSpec:
    def test_alpha_is_unit_lag_at_eps0(self, wrapped):
        xs = np.array([[0.0], [0.3], [0.77]])
        us = np.array([[0.0], [0.1], [-0.2]])
        a = wrapped.alpha(1.0, 0.0, xs, us)
        assert np.max(np.abs(a - 1.0)) <= 1e-9

    def test_passes_assumption_checks(self, wrapped):
        box = pm.SamplingBox(omega=(0.0, 0.0), eps=(-0.01, 0.01),
                             x=(0.0, 1.6), y_radius=0.01)
        rep = pm.check_assumptions(wrapped, box=box, n_samples=16, seed=3)
        assert abs(rep.q_estimate - 0.5 / np.e) <= 0.01
        assert rep.a2_defect <= 1e-8
        assert rep.periodicity_defect <= 1e-8
        assert rep.beta_y0_invertible

    def test_curve_graph_invariant_under_P_eps(self, handle, wrapped,
                                               hybrid_curve):
        # lift curve points through the Poincare map and compare to the curve
        taus = np.linspace(0.0, 0.8, 12, endpoint=False)
        us = hybrid_curve.eval(taus)
        tbar, ubar = pm.p_eps_batch(handle, taus, us, 0.01)
        gap = np.abs(ubar - hybrid_curve.eval(tbar))
        assert np.max(gap) <= 1e-9

    def test_certified_radius_full_chart(self, handle):
        from dataclasses import replace

        h = replace(handle)
        r = pm.poincare.certify_returns(h, eps_range=(-0.01, 0.01),
                                        n_samples=12, seed=4)
        assert r == handle.sys.r1
        assert h.effective_r1 == r

    def test_dense_samples_on_request(self, e3):
        res = pm.flow(e3, 0.0, [1.0, 0.0], 0.0, t_end=0.5, dense=True)
        ts, states = res.dense(64)
        assert ts.shape == (64,) and states.shape == (64, 2)
        assert np.max(np.abs(np.linalg.norm(states, axis=1) - 1.0)) <= 1e-8

    def test_csv_log(self, handle, tmp_path):
        rows = []
        for tau, u in [(0.0, 0.1), (0.3, -0.1)]:
            tbar, ubar = pm.P_eps(handle, tau, [u], 0.001)
            rows.append((tau, u, 0.001, tbar, ubar[0], tbar - tau))
        out = tmp_path / "p_eps.csv"
        pm.poincare.write_p_eps_csv(out, rows)
        text = out.read_text().splitlines()
        assert text[0] == "tau,u1,eps,tau_bar,u_bar1,return_lag"
        assert len(text) == 3
