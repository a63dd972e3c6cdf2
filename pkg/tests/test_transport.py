import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergo_sfde.errors import InvalidParameterError, SolverCapError
from ergo_sfde.segment import Segment
from ergo_sfde.sim import SimConfig
from ergo_sfde.transport import (EmpiricalMeasure, ReferenceEnsemble, cost_matrix, round_to_feasible, sinkhorn,
                                 solve_exact, w1_sorted, wasserstein_exact, wasserstein_sinkhorn,
                                 wasserstein_time_marginals)

from oracles import FROZEN, brute_force_assignment


def consts(values):
    return EmpiricalMeasure.uniform([Segment.constant(1.0, v) for v in values])


THREE = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.2]])


def test_three_by_three_example():
    assert brute_force_assignment(THREE) == pytest.approx(FROZEN["ot_3x3"], abs=1e-15)
    assert solve_exact(THREE).cost == pytest.approx(FROZEN["ot_3x3"], abs=1e-12)
    assert abs(sinkhorn(THREE, epsilon=1e-3).cost - FROZEN["ot_3x3"]) <= 1e-3


def test_uniform_shift_of_constants():
    mu, nu = consts([0.0, 0.5, 1.0]), consts([0.1, 0.6, 1.1])
    assert wasserstein_exact(mu, nu).cost == pytest.approx(0.1, abs=1e-12)


def test_single_atoms_and_cap_at_one():
    assert wasserstein_exact(consts([0.0]), consts([0.3])).cost == pytest.approx(0.3)
    assert wasserstein_exact(consts([0.0]), consts([5.0])).cost == 1.0


def test_unequal_sizes_use_lp():
    p = wasserstein_exact(consts([0.0, 1.0]), consts([0.5]))
    assert p.solver == "linprog"
    assert p.cost == pytest.approx(0.5)
    assert p.marginal_error < 1e-9


def test_measure_validation():
    with pytest.raises(InvalidParameterError):
        EmpiricalMeasure.uniform([])
    with pytest.raises(InvalidParameterError):
        EmpiricalMeasure((Segment.constant(1.0, 0.0),), [0.5])
    with pytest.raises(InvalidParameterError):
        EmpiricalMeasure.uniform([Segment.constant(1.0, 0.0), Segment.constant(2.0, 0.0)])
    with pytest.raises(InvalidParameterError):
        EmpiricalMeasure.uniform([Segment.constant(1.0, 0.0)], "l2")


def test_exact_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        C = np.minimum(np.abs(rng.normal(size=(n, n))), 1.0)
        assert abs(solve_exact(C).cost - brute_force_assignment(C)) <= 1e-12


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6), st.lists(st.floats(-2, 2), min_size=1, max_size=6))
def test_symmetry_and_self_distance(xs, ys):
    mu, nu = consts(xs), consts(ys)
    assert wasserstein_exact(mu, nu).cost == pytest.approx(wasserstein_exact(nu, mu).cost, abs=1e-9)
    assert wasserstein_exact(mu, mu).cost == pytest.approx(0.0, abs=1e-12)


def test_triangle_inequality_random_triples():
    rng = np.random.default_rng(1)
    for _ in range(500):
        a, b, c = (consts(rng.normal(scale=0.5, size=4)) for _ in range(3))
        ab, bc, ac = (wasserstein_exact(p, q).cost for p, q in ((a, b), (b, c), (a, c)))
        assert ac <= ab + bc + 1e-12


def test_sorted_matching_equals_exact_in_one_dimension():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, y = rng.uniform(-0.4, 0.4, 30), rng.uniform(-0.4, 0.4, 30)
        # distances stay below the cap, so the capped cost is |x - y|
        assert wasserstein_exact(consts(x), consts(y)).cost == pytest.approx(w1_sorted(x, y), abs=1e-9)


def test_cost_matrix_capped():
    C = cost_matrix(consts([0.0, 3.0]), consts([0.2]))
    assert C[0, 0] == pytest.approx(0.2) and C[1, 0] == 1.0


def test_sinkhorn_close_to_exact_at_small_epsilon():
    rng = np.random.default_rng(3)
    for n in (5, 12, 30):
        C = rng.uniform(size=(n, n))
        p = sinkhorn(C, epsilon=1e-3)
        assert abs(p.cost - solve_exact(C).cost) <= 1e-3
        assert p.marginal_error < 1e-12


def test_sinkhorn_improves_as_epsilon_halves():
    C = np.random.default_rng(4).uniform(size=(15, 15))
    exact = solve_exact(C).cost
    gaps = [sinkhorn(C, epsilon=e).cost - exact for e in (0.4, 0.2, 0.1, 0.05)]
    assert all(g >= -1e-12 for g in gaps)
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_sinkhorn_large_epsilon_gives_independent_coupling():
    C = np.random.default_rng(5).uniform(size=(6, 6))
    assert sinkhorn(C, epsilon=1e6).cost == pytest.approx(C.mean(), rel=1e-5)


def test_sinkhorn_measures_and_rounding():
    p = wasserstein_sinkhorn(consts([0.0, 0.5]), consts([0.1, 0.6]), epsilon=1e-3)
    assert p.cost == pytest.approx(0.1, abs=1e-3)
    P = round_to_feasible(np.full((3, 3), 0.2), np.full(3, 1 / 3), np.full(3, 1 / 3))
    assert np.allclose(P.sum(0), 1 / 3) and np.allclose(P.sum(1), 1 / 3)
    with pytest.raises(InvalidParameterError):
        sinkhorn(np.ones((2, 2)), epsilon=0.0)


def test_exact_cap():
    big = consts(np.linspace(0, 1, 6))
    with pytest.raises(SolverCapError):
        wasserstein_exact(big, big, cap=5)


# --- time-marginal curves --------------------------------------------------------------------

def test_identical_initial_data_give_zero_curve(ou_default):
    xi = Segment.constant(1.0, 0.4)
    c = wasserstein_time_marginals(ou_default, xi, xi, [1.0, 2.0], 32, SimConfig(0.01, 2.0), n_boot=5)
    assert c.w_upper == [0.0, 0.0]


def test_pair_curve_decreases(ou_default):
    c = wasserstein_time_marginals(ou_default, Segment.constant(1.0, 1.0), Segment.constant(1.0, 0.0),
                                   [1.0, 2.0, 3.0, 4.0], 128, SimConfig(0.01, 4.0), n_boot=30)
    assert c.mode == "pair" and c.decreasing_trend
    assert c.fitted_slope < 0 and abs(c.slope_z) > 3
    assert all(s == "assignment" for s in c.solver)


def test_reference_curve_and_sinkhorn_fallback(ou_default):
    ref = ReferenceEnsemble(Segment.constant(1.0, 0.0), 10.0)
    c = wasserstein_time_marginals(ou_default, Segment.constant(1.0, 3.0), ref, [1.0, 3.0], 40,
                                   SimConfig(0.01, 3.0), n_boot=5, cap=16, epsilon=1e-2)
    assert c.mode == "reference" and c.solver == ["sinkhorn", "sinkhorn"]
    assert c.w_upper[1] < c.w_upper[0]


def test_skorohod_ground_metric_is_below_sup(ou_default):
    xi, eta = Segment.constant(1.0, 1.0), Segment.constant(1.0, 0.0)
    cfg = SimConfig(0.05, 2.0)
    sup = wasserstein_time_marginals(ou_default, xi, eta, [1.0, 2.0], 12, cfg, n_boot=2)
    sk = wasserstein_time_marginals(ou_default, xi, eta, [1.0, 2.0], 12, cfg, "skorohod_upper_capped", n_boot=2)
    assert all(b <= a + 1e-12 for a, b in zip(sup.w_upper, sk.w_upper))


def test_curve_input_validation(ou_default):
    xi = Segment.constant(1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        wasserstein_time_marginals(ou_default, xi, xi, [0.5], 8, SimConfig(0.01, 1.0))
    with pytest.raises(InvalidParameterError):
        wasserstein_time_marginals(ou_default, xi, xi, [], 8, SimConfig(0.01, 1.0))
    with pytest.raises(InvalidParameterError):
        wasserstein_time_marginals(ou_default, xi, xi, [1.0], 8, SimConfig(0.01, 1.0), metric="l2")
