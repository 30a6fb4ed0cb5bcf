import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrpenalty.diagnostics import (
    HOLDS,
    NOT_APPLICABLE,
    VIOLATED,
    MonitorTally,
    MonitorVerdict,
    default_fit_window,
    fit_power_law,
    fit_rate,
    lemma_monitor_rec,
    penalty_gradient_residual,
    quantity_column,
    stationarity_report,
    surrogate_bound,
)
from vrpenalty.errors import ConfigurationError, InsufficientDataError
from vrpenalty.problem import SmoothnessConstants
from vrpenalty.rng import SampleContext
from vrpenalty.schedules import ScheduleFamily, ScheduleValues, schedule_at, theory_constants
from vrpenalty.solvers import RunConfig, init_state, run, solver_step
from vrpenalty.testproblems import linear_problem, make_test_problem, plain_quadratic_objective


def _consts(**kw):
    base = dict(L_f=2.0, L_c=1.0, C_c=math.inf, L_nabla_c=0.0, sigma=0.0, gamma=1.0, theta=1.0,
                L_bar_nabla_f=1.0, L_nabla_f=1.0)
    base.update(kw)
    return SmoothnessConstants(**base)


class TestResidual:
    def test_stationary_feasible_point(self):
        p = linear_problem(np.eye(2), [1.0, 2.0], plain_quadratic_objective(np.ones(2), center=[1.0, 2.0]))
        assert penalty_gradient_residual(p, np.array([1.0, 2.0]), 10.0) == 0.0

    def test_scalar_sum(self):
        # f = x^2 gives grad 2 at x = 1; rho c c' = 3 with c = x, rho = 3
        p = linear_problem([[1.0]], [0.0], plain_quadratic_objective(np.array([1.0])))
        assert penalty_gradient_residual(p, np.array([1.0]), 3.0) == 5.0

    def test_surrogate_formula(self):
        p = linear_problem([[1.0]], [0.0], plain_quadratic_objective(np.array([1.0])))
        v = ScheduleValues(k=1, rho=2.0, eta=0.5, alpha=1.0)
        # 3 (eta^-2 + (L_hat + rho L)^2) dx^2 + 3 err^2 = 3 (4 + 9) 0.01 + 3 0.25
        got = surrogate_bound(p, np.array([1.0]), np.array([1.1]), np.array([1.5]), v, 1.0)
        assert got == pytest.approx(3 * 13 * 0.01 + 3 * 0.25, rel=1e-12)

    @pytest.mark.parametrize("desc,algorithm", [
        ("family=linear-eq n=6 m=2 noise_sigma=0.5 seed=3", "alg1"),
        ("family=sphere n=3 m=1 noise_sigma=0.5 seed=3", "alg2"),
        ("family=power n=3 m=1 p=2 noise_sigma=0.5 seed=3", "alg1"),
    ])
    def test_domination_on_real_steps(self, desc, algorithm):
        p = make_test_problem(desc)
        cfg = RunConfig(algorithm=algorithm, max_iterations=1000, seed=2)
        ctx = SampleContext(2)
        state = init_state(p, cfg, ctx)
        for k in range(1, 1001):
            values = schedule_at(cfg.schedule, k)
            nxt = solver_step(state, p, values, ctx)
            rep = stationarity_report(p, k, state.x, nxt.x, state.estimator.g, values, algorithm)
            assert rep.dominated, (k, rep)
            state = nxt


class TestLemmaMonitor:
    def test_feasible_trajectory_holds(self):
        v = ScheduleValues(5, 2.0, 0.05, 0.5)
        assert lemma_monitor_rec(None, 0.0, 0.0, v, _consts()).status == HOLDS

    def test_not_applicable(self):
        v = ScheduleValues(5, 2.0, 1.0, 0.5)
        assert lemma_monitor_rec(None, 0.0, 0.0, v, _consts()).status == NOT_APPLICABLE

    def test_violation_detected(self):
        v = ScheduleValues(5, 2.0, 0.05, 0.5)
        verdict = lemma_monitor_rec(None, 0.1, 5.0, v, _consts())
        assert verdict.status == VIOLATED and verdict.lhs > verdict.rhs

    def test_sides(self):
        v = ScheduleValues(3, 2.0, 0.1, 0.5)
        c = _consts(theta=1.5, gamma=2.0)
        verdict = lemma_monitor_rec(None, 0.3, 0.2, v, c)
        assert verdict.lhs == pytest.approx(0.2 + 2**-0.5 * 4.0 * 0.2 * 0.2**1.5, rel=1e-14)
        assert verdict.rhs == pytest.approx(0.3 + 4.0 * 0.1 / 4.0, rel=1e-14)

    def test_inline_matches_reference(self):
        p = make_test_problem("family=sphere n=3 m=1 noise_sigma=0.5 seed=8")
        rec = run(p, RunConfig(algorithm="alg1", max_iterations=800, seed=1, trace_stride=1))
        h = rec.column("h")
        for i in range(len(h) - 1):
            values = ScheduleValues(int(rec.column("k")[i]), rec.column("rho")[i], rec.column("eta")[i],
                                    rec.column("alpha")[i])
            assert lemma_monitor_rec(p, h[i], h[i + 1], values).status == rec.column("lemma_verdict")[i]

    def test_tally(self):
        t = MonitorTally()
        for k in range(30):
            t.add(k, MonitorVerdict(VIOLATED, 2.0, 1.0))
        t.add(31, MonitorVerdict(HOLDS, 0.0, 1.0))
        t.add(32, MonitorVerdict(NOT_APPLICABLE, 0.0, 1.0))
        assert (t.holds, t.violated, t.not_applicable, t.applicable) == (1, 30, 1, 31)
        assert len(t.violations) == MonitorTally.MAX_KEPT
        other = MonitorTally(holds=5)
        other.merge(t)
        assert other.holds == 6 and len(other.violations) == MonitorTally.MAX_KEPT


class TestFit:
    def test_inverse(self):
        k = np.arange(1, 2001, dtype=float)
        fit = fit_power_law(k, 1.0 / k, (1, 2000))
        assert fit.slope == pytest.approx(-1.0, abs=1e-9)

    def test_two_thirds(self):
        k = np.arange(1, 2001, dtype=float)
        fit = fit_power_law(k, 5 * k ** (-2 / 3), (10, 2000))
        assert fit.slope == pytest.approx(-2 / 3, abs=1e-9)
        assert fit.intercept == pytest.approx(math.log(5), abs=1e-9)
        assert fit.rows == 1991

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=-3.0, max_value=1.0), st.floats(min_value=-5.0, max_value=5.0))
    def test_recovers_planted_exponent(self, slope, log_scale):
        k = np.unique(np.round(np.geomspace(1, 1e5, 300)))
        fit = fit_power_law(k, math.exp(log_scale) * k**slope, (1e2, 1e5))
        assert abs(fit.slope - slope) <= 1e-6

    def test_too_few_rows(self):
        k = np.arange(1, 30, dtype=float)
        with pytest.raises(InsufficientDataError):
            fit_power_law(k, 1 / k, (1, 100))

    def test_zero_tail_truncates(self):
        k = np.arange(1, 200, dtype=float)
        q = 1 / k
        q[150:] = 0.0
        fit = fit_power_law(k, q, (1, 199))
        assert fit.truncated and fit.rows == 150
        assert fit.slope == pytest.approx(-1.0, abs=1e-9)

    def test_fit_rate_on_record(self):
        rec = run(make_test_problem("family=linear-eq n=6 m=2 noise_sigma=0.5 seed=3"),
                  RunConfig(algorithm="alg2", max_iterations=3000, seed=1))
        fit = fit_rate(rec, "feasibility_sq", (100, 3000))
        assert fit.slope < 0
        assert np.array_equal(quantity_column(rec, "feasibility_sq"), 2 * rec.column("h"))
        with pytest.raises(ConfigurationError):
            quantity_column(rec, "temperature")

    def test_default_window(self):
        tc = theory_constants(ScheduleFamily.alg1(1.0), _consts(L_f=1.0, C_c=1.0))
        assert default_fit_window(tc, 10**5) == ((2 * 842, 10**5), False)
        assert default_fit_window(tc, 1000) == ((100, 1000), True)
        assert default_fit_window(None, 500) == ((100, 500), True)
