"""Time-to-return and Poincare maps of a hybrid system, and their wrapping
into the perturbed-map form consumed by the invariant-curve solver.

The time-to-return at (tau, x) flows the forced system from the post-jump
state Delta(x) starting at time tau and reports the absolute first admissible
crossing time of S.  The Poincare map sends (tau, u) on the section chart to
(new time, chart coordinates of the return point); at eps = 0 its u-component
is autonomous and defines the reduced map P(u).

`extract_alpha_beta` packages the pair (return lag, returned u) as the alpha
and beta evaluators of a `MapSpec` with x := tau, k1 = 1 and period T_g; the
technical omega input is fixed to 1 and ignored.  Both evaluators share one
flow per evaluation point through a small memo, so a root solve that has just
evaluated alpha gets the matching beta for free.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ChartError, NoReturnError
from .hybrid_ode import EventConfig, check_transversality, flow_batch
from .map_core import MapSpec
from .numdiff import central_jacobian
from .sampling import ball_points, latin_hypercube, scale_to

Array = np.ndarray


@dataclass
class PoincareHandle:
    """A hybrid system plus the event/integrator configuration of its returns."""

    sys: object
    event: EventConfig
    max_time: float
    rtol: float
    atol: float
    anchor_u: Array
    anchor_return_lag: float
    effective_r1: float
    chart_tol: float = 1e-8


def prepare_handle(sys, *, event=None, max_time=None, rtol=1e-12, atol=1e-14):
    """Probe the anchor return and fix the event direction from the cycle.

    The defaults run the integrator tighter than the generic flow defaults;
    Poincare-level constants (fixed points, Jacobians) need the extra digits.
    """
    if event is None:
        direction = int(np.sign(check_transversality(sys)))
        if direction == 0:
            raise ChartError("the field is tangent to S at the anchor")
        event = EventConfig(direction=direction)
    u0 = np.zeros(sys.k2)
    v0 = np.asarray(sys.Delta(np.asarray(sys.D(u0[None, :]), float)), float)
    probe = flow_batch(sys, [0.0], v0, 0.0, event=event,
                       max_time=max_time or 50.0, rtol=rtol, atol=atol)
    lag = float(probe.end_times[0])
    if max_time is None:
        max_time = 10.0 * lag
    return PoincareHandle(sys=sys, event=event, max_time=max_time, rtol=rtol,
                          atol=atol, anchor_u=u0, anchor_return_lag=lag,
                          effective_r1=sys.r1)


def _return_batch(handle, taus, xs, eps):
    """Flow from (tau, Delta(x)); absolute crossing times and return states."""
    sys = handle.sys
    starts = np.asarray(sys.Delta(np.atleast_2d(xs)), dtype=float)
    res = flow_batch(sys, taus, starts, eps, event=handle.event,
                     max_time=handle.max_time, rtol=handle.rtol,
                     atol=handle.atol)
    return res.end_times, res.end_states


def time_to_return(handle, tau, x, eps):
    """Absolute first-hit time of the flow started at (tau, Delta(x))."""
    times, _ = _return_batch(handle, [float(tau)],
                             np.asarray(x, float)[None, :], eps)
    return float(times[0])


def _pull_back(handle, states):
    """Chart coordinates of near-section states, projecting along grad H first."""
    sys = handle.sys
    h = np.asarray(sys.H(states), dtype=float)
    off = np.abs(h) > handle.event.h_tol
    if np.any(off):
        def h_batch(X):
            return np.asarray(sys.H(X), dtype=float)[:, None]

        states = states.copy()
        for i in np.nonzero(off)[0]:
            grad = central_jacobian(h_batch, states[i])[0]
            states[i] = states[i] - h[i] * grad / float(grad @ grad)
    us = np.asarray(sys.D_inverse(states), dtype=float)
    back = np.asarray(sys.D(us), dtype=float)
    gap = np.linalg.norm(back - states, axis=-1)
    worst = float(np.max(gap)) if gap.size else 0.0
    if worst > handle.chart_tol:
        raise ChartError(
            f"return point lies {worst:.3g} off the chart image "
            f"(tolerance {handle.chart_tol:g})"
        )
    return us


def p_eps_batch(handle, taus, us, eps):
    """Vectorized Poincare map: (taus, us) -> (new times, new us)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    xs = np.asarray(handle.sys.D(us), dtype=float)
    times, states = _return_batch(handle, taus, xs, eps)
    return times, _pull_back(handle, states)


def P_eps(handle, tau, u, eps):
    """The forced Poincare map at a single point: (new time, new u)."""
    times, us = p_eps_batch(handle, [float(tau)],
                            np.asarray(u, float)[None, :], eps)
    return float(times[0]), us[0]


def P_reduced(handle, u):
    """u-component of the unforced Poincare map; tau-independent at eps = 0."""
    return P_eps(handle, 0.0, u, 0.0)[1]


def p_reduced_batch(handle, us):
    return p_eps_batch(handle, np.zeros(len(np.atleast_2d(us))), us, 0.0)[1]


def certify_returns(handle, eps_range=(0.0, 0.0), n_samples=32, seed=0):
    """Sample the chart for return existence; records the certified radius.

    Tries the full chart radius first, then a shrinking ladder; the largest
    radius whose samples all return becomes ``effective_r1``.
    """
    rng = np.random.default_rng(seed)
    sys = handle.sys
    for fraction in (1.0, 0.75, 0.5, 0.25):
        r = fraction * sys.r1
        u = latin_hypercube(rng, n_samples, 2 + sys.k2)
        taus = scale_to(u[:, 0], 0.0, sys.T_g)
        epses = scale_to(u[:, 1], *eps_range)
        us = ball_points(u[:, 2:], r)
        ok = True
        for tau, e, uu in zip(taus, epses, us):
            try:
                p_eps_batch(handle, [tau], uu[None, :], float(e))
            except (NoReturnError, ChartError):
                ok = False
                break
        if ok:
            handle.effective_r1 = r
            return r
    raise NoReturnError("no sampled chart radius returned reliably")


class _WrappedPoincare:
    """alpha/beta evaluators backed by the Poincare map, with a shared memo.

    One return flow yields both the lag (alpha) and the new chart point
    (beta); results are memoized per (eps, tau, u) so the beta evaluation at
    the preimages found by the curve solver reuses the alpha flows.
    """

    def __init__(self, handle):
        self.handle = handle
        self._memo = {}

    def _lookup(self, eps, taus, us):
        keys = [(eps, float(t)) + tuple(float(c) for c in u)
                for t, u in zip(taus, us)]
        missing = [i for i, k in enumerate(keys) if k not in self._memo]
        if missing:
            times, new_us = p_eps_batch(self.handle, taus[missing],
                                        us[missing], eps)
            if len(self._memo) > 500_000:
                self._memo.clear()
            for j, i in enumerate(missing):
                self._memo[keys[i]] = (float(times[j]), new_us[j])
        lags = np.array([self._memo[k][0] for k in keys]) - taus
        outs = np.stack([self._memo[k][1] for k in keys])
        return lags, outs

    def alpha(self, omega, eps, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        lags, _ = self._lookup(float(eps), x[:, 0], y)
        return lags[:, None]

    def beta(self, omega, eps, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        _, outs = self._lookup(float(eps), x[:, 0], y)
        return outs


def extract_alpha_beta(handle, eps_range=None, certify_samples=0, seed=0,
                       rtol=1e-10, atol=1e-12):
    """Wrap the Poincare map into the perturbed-map form with x := tau.

    alpha(omega, eps, tau, u) is the return lag T_eps(tau, D(u)) - tau and
    beta is the u-component of the return; omega is fixed to 1 by the wrapper
    and ignored by the evaluators.  With ``certify_samples`` > 0 the chart is
    first sampled for return existence over ``eps_range``.

    ``rtol``/``atol`` set the integrator tolerance of the wrapped evaluators;
    the default is the generic flow tolerance, looser than the handle's
    Poincare-grade setting, because curve solving calls the map thousands of
    times and only needs accuracy at the invariance-residual scale.
    """
    if certify_samples and eps_range is not None:
        certify_returns(handle, eps_range, n_samples=certify_samples, seed=seed)
    eval_handle = replace(handle, rtol=rtol, atol=atol)
    wrapper = _WrappedPoincare(eval_handle)
    sys = handle.sys
    return MapSpec(
        k1=1,
        k2=sys.k2,
        r1=handle.effective_r1,
        alpha=wrapper.alpha,
        beta=wrapper.beta,
        periodic_coord=1,
        period=sys.T_g,
        label=f"poincare[{sys.label or 'hybrid'}]",
    )


def write_p_eps_csv(path, rows):
    """Diagnostic sweep rows: (tau, u..., eps, tau_bar, u_bar..., return_lag)."""
    with open(path, "w") as fh:
        k2 = (len(rows[0]) - 3) // 2
        cols = (["tau"] + [f"u{j+1}" for j in range(k2)] + ["eps", "tau_bar"]
                + [f"u_bar{j+1}" for j in range(k2)] + ["return_lag"])
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join("%.16e" % v for v in row) + "\n")
