import math

import numpy as np
import pytest

from ergo_sfde.ergodicity import (RatePolicy, ReportSettings, clopper_pearson, condition_c2_report,
                                  default_probes, drift_constant, ergodicity_report, lyapunov_drift_check,
                                  moment_bound_check, rate_bound, support_check)
from ergo_sfde.errors import InvalidParameterError
from ergo_sfde.model import make_builtin
from ergo_sfde.segment import Segment, sup_norm
from ergo_sfde.sim import SimConfig

T_GRID = np.linspace(0.0, 50.0, 201)


# --- rate bound ---------------------------------------------------------------------------

def test_rate_at_time_zero():
    p = RatePolicy("sqrt", delta=0.5, C1=2.0)
    assert rate_bound(p, 9.0, 0.0) == pytest.approx(2.0 * (1 + 3.0 ** 0.5))


@pytest.mark.parametrize("V0", [0.0, 1.0, 7.5])
def test_linear_f_gives_exponential_rate(V0):
    p = RatePolicy("linear", delta=0.5, C1=1.5, C2=0.3)
    for t in T_GRID:
        closed = 1.5 * (1 + V0 ** 0.5) * math.exp(-0.5 * 0.3 * t)
        assert abs(rate_bound(p, V0, t) - closed) <= 1e-8


@pytest.mark.parametrize("V0", [0.0, 1.0, 7.5])
def test_sqrt_f_gives_polynomial_rate(V0):
    p = RatePolicy("sqrt", delta=0.25, C1=1.0, C2=2.0)
    for t in T_GRID:
        closed = (1 + V0 ** 0.125) / (1 + 2.0 * t / 2) ** 0.25
        assert abs(rate_bound(p, V0, t) - closed) <= 1e-8


@pytest.mark.parametrize("f", ["linear", "sqrt", lambda u: u ** 0.75])
def test_rate_non_increasing_and_inverse_accurate(f):
    p = RatePolicy(f, delta=0.5)
    vals = [rate_bound(p, 2.0, t) for t in T_GRID]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    for s in np.linspace(0.0, 100.0, 41):
        assert abs(p.F(p.F_inv(s)) - s) <= 1e-8 if s > 0 else p.F_inv(s) == 1.0


def test_superlinear_f_has_bounded_F():
    # F(x) = 2 (1 - x^{-1/2}) < 2
    p = RatePolicy(lambda u: u ** 1.5)
    assert p.F(p.F_inv(1.5)) == pytest.approx(1.5, abs=1e-8)
    with pytest.raises(InvalidParameterError):
        p.F_inv(2.5)


def test_rate_accepts_segment():
    p = RatePolicy("linear", V="sup")
    seg = Segment.step(1.0, -0.5, -2.0, 1.0)
    assert rate_bound(p, seg, 1.0) == pytest.approx(rate_bound(p, 4.0, 1.0))


def test_policy_validation():
    with pytest.raises(InvalidParameterError):
        RatePolicy(lambda u: u / (1 + u))
    with pytest.raises(InvalidParameterError):
        RatePolicy(lambda u: u + 1)
    with pytest.raises(InvalidParameterError):
        RatePolicy("cube")
    with pytest.raises(InvalidParameterError):
        RatePolicy(delta=1.0)
    with pytest.raises(InvalidParameterError):
        RatePolicy(V="l2")
    with pytest.raises(InvalidParameterError):
        rate_bound(RatePolicy(), 1.0, -1.0)


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(50, 100)
    assert lo < 0.5 < hi


def test_default_probes_inside_ball():
    probes = default_probes(1.0, 2.0)
    assert all(sup_norm(p) <= 2.0 + 1e-12 for p in probes)
    assert max(sup_norm(p) for p in probes) == 2.0


def test_drift_constant_formula():
    assert drift_constant(make_builtin("ou_jump", {})) == pytest.approx(1.25)
    assert drift_constant(make_builtin("linear_delay", dict(g1=0.5, a=1.0))) == pytest.approx(
        1.0 + make_builtin("linear_delay", dict(g1=0.5)).c_moment2 + 0.25)


# --- drift --------------------------------------------------------------------------------

def test_zero_dynamics_drift_is_exact(zero_model):
    p = RatePolicy("linear", K=1.0)
    cfg = SimConfig(0.01, 1.0)
    inside = lyapunov_drift_check(zero_model, p, [Segment.constant(1.0, 0.7)], [0.5, 1.0], 2, 3, cfg)
    assert inside.passed and all(r.stderr == 0.0 for r in inside.rows)
    # V = 4 > K: the deterministic slack (V - K) t is positive
    outside = lyapunov_drift_check(zero_model, p, [Segment.constant(1.0, 2.0)], [0.5, 1.0], 2, 3, cfg)
    assert not outside.passed
    assert outside.rows[-1].slack == pytest.approx(3.0, rel=1e-12)


def test_drift_passes_for_default_and_fails_for_repelling(ou_default):
    p = RatePolicy("linear")
    cfg = SimConfig(0.01, 2.0)
    probes = [Segment.constant(1.0, 1.0), Segment.constant(1.0, 2.0)]
    assert lyapunov_drift_check(ou_default, p, probes, [1.0, 2.0], 10, 100, cfg).passed
    bad = make_builtin("ou_jump", dict(a=-0.5), unchecked=True)
    assert not lyapunov_drift_check(bad, p, probes, [1.0, 2.0], 10, 100, cfg).passed


def test_drift_input_validation(ou_default):
    with pytest.raises(InvalidParameterError):
        lyapunov_drift_check(ou_default, RatePolicy(), [Segment.constant(1.0, 0.0)], [0.0], 2, 2,
                             SimConfig(0.01, 1.0))
    with pytest.raises(InvalidParameterError):
        lyapunov_drift_check(ou_default, RatePolicy(), [Segment.constant(1.0, 0.0)], [1.0], 1, 2,
                             SimConfig(0.01, 1.0))


# --- support ------------------------------------------------------------------------------

def test_support_without_jumps_full_equals_aux():
    m = make_builtin("ou_jump", dict(jump_rate=0.0))
    r = support_check(m, 1.0, 0.8, 2.0, 2000, SimConfig(0.01, 2.0))
    assert all(row.p_full == row.p_aux and row.no_jump_fraction == 1.0 for row in r.rows)
    assert r.passed


def test_support_ordering_and_no_jump_fraction(ou_default):
    r = support_check(ou_default, 2.0, 0.8, 2.0, 4000, SimConfig(0.01, 2.0))
    for row in r.rows:
        assert row.ordering_ok and row.no_jump_ok
        assert row.no_jump_expected == pytest.approx(math.exp(-2.0))
    assert len(r.csv_rows()) == len(r.rows)


def test_support_validation(ou_default):
    with pytest.raises(InvalidParameterError):
        support_check(ou_default, 1.0, 0.5, 0.5, 10, SimConfig(0.01, 1.0))
    with pytest.raises(InvalidParameterError):
        support_check(ou_default, 1.0, 0.5, 1.0, 10, SimConfig(0.01, 1.0), probes=[Segment.constant(1.0, 3.0)])


def test_support_tiny_ball_is_inconclusive(ou_default):
    r = support_check(ou_default, 1.0, 1e-9, 1.0, 50, SimConfig(0.01, 1.0), probes=[Segment.constant(1.0, 1.0)])
    assert r.inconclusive and not r.passed


# --- moments and C2 -------------------------------------------------------------------------

def test_moment_growth_is_at_most_linear(ou_default):
    probes = [Segment.constant(1.0, v) for v in (0.0, 1.0, 2.0, 4.0)]
    r = moment_bound_check(ou_default, probes, 1000, SimConfig(0.01, 1.0))
    assert r.passed and r.exponent <= 1.1
    assert all(a < b for a, b in zip(r.mean_sup_sq, r.mean_sup_sq[1:]))
    with pytest.raises(InvalidParameterError):
        moment_bound_check(ou_default, probes[:1], 10, SimConfig(0.01, 1.0))


@pytest.mark.parametrize("case", ["i", "ii"])
def test_small_set_probability_positive(ou_default, case):
    r = condition_c2_report(ou_default, 4.0, 2.0, 5.0, 1000, SimConfig(0.01, 5.0), case=case)
    assert r.passed and r.min_cp_lower > 0.05
    if case == "ii":
        assert r.factors["chebyshev_ok"] and r.factors["L"] > 0


def test_small_set_validation(ou_default):
    cfg = SimConfig(0.01, 5.0)
    with pytest.raises(InvalidParameterError):
        condition_c2_report(ou_default, 4.0, 2.0, 0.5, 10, cfg)
    with pytest.raises(InvalidParameterError):
        condition_c2_report(ou_default, 4.0, 2.0, 1.5, 10, cfg, case="ii")
    with pytest.raises(InvalidParameterError):
        condition_c2_report(ou_default, 4.0, 2.0, 5.0, 10, cfg, case="iii")


# --- combined report ------------------------------------------------------------------------

SMALL = ReportSettings(c1_times=(1.0, 2.0, 3.0, 4.0, 5.0), c1_paths=500, c2_paths=500, drift_outer=10,
                       drift_inner=50, w_times=(1.0, 2.0, 3.0, 4.0), w_samples=96, w_boot=40)


def test_report_without_jumps_passes():
    m = make_builtin("ou_jump", dict(jump_rate=0.0))
    rep = ergodicity_report(m, SimConfig(0.01, 5.0), SMALL)
    assert rep.verdict == "pass", rep.reasons
    d = rep.to_dict()
    assert d["wasserstein"]["headline_pass"] and d["wasserstein"]["rate_fit"]["C2"] > 0


def test_report_negative_control_fails():
    bad = make_builtin("ou_jump", dict(a=-0.5), unchecked=True)
    rep = ergodicity_report(bad, SimConfig(0.01, 5.0), SMALL)
    assert rep.verdict == "fail"
    assert "lyapunov" in rep.reasons
