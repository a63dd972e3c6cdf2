"""Independent reference computations used by the tests.

Nothing here imports the package's solvers: each oracle is a brute-force
scan or a closed form.  FROZEN holds the numbers the oracles produced when
the suite was written; ``test_oracles_reproduce_frozen`` keeps them honest.
"""
import itertools
import math

import numpy as np


def brute_force_assignment(C):
    """Minimum mean cost over all permutations."""
    n = C.shape[0]
    return min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))


def cadlag_value(grid, values, pre, theta):
    """Right-continuous lookup on a stored grid (pre is unused except at jumps)."""
    i = np.searchsorted(grid, theta, side="right") - 1
    return values[max(i, 0)]


def scan_sup_distance(ga, va, pa, gb, vb, pb):
    """Sup of |a - b| over both grids, every midpoint, and every stored pre-jump value."""
    pts = np.union1d(ga, gb)
    mids = 0.5 * (pts[1:] + pts[:-1])
    best = 0.0
    for th in np.concatenate([pts, mids]):
        best = max(best, abs(cadlag_value(ga, va, pa, th) - cadlag_value(gb, vb, pb, th)))
    # left limits: stored pre value at a marked point, the value itself at an
    # unmarked grid point (continuity point), the last value strictly before otherwise
    def left(g, v, p, th):
        if th in p:
            return p[th]
        if th in g:
            return cadlag_value(g, v, p, th)
        return cadlag_value(g, v, p, th - 1e-13)

    for th in pts[1:]:
        best = max(best, abs(left(ga, va, pa, th) - left(gb, vb, pb, th)))
    return best


def two_knot_skorohod_scan(s_a, s_b, tau=1.0, step=0.01):
    """Skorohod-type cost of unit steps at s_a, s_b under one-interior-knot time changes.

    lambda maps -tau -> -tau, u -> v, 0 -> 0; the cost is the log-slope
    distortion plus the sup of |1{lambda(theta) >= s_a} - 1{theta >= s_b}|.
    """
    best = math.inf
    thetas = np.linspace(-tau, 0, 2001)
    knots = np.round(np.arange(-tau + step, -step / 2, step), 12)
    for u in knots:
        for v in knots:
            norm = max(abs(math.log((v + tau) / (u + tau))), abs(math.log(v / u)))
            lam = np.where(thetas <= u, -tau + (thetas + tau) * (v + tau) / (u + tau), v + (thetas - u) * (-v) / (-u))
            dev = np.max(np.abs((lam >= s_a - 1e-12).astype(float) - (thetas >= s_b - 1e-12)))
            best = min(best, norm + dev)
    return best


def ou_stationary_variance(a, sigma0, c_moment2):
    return (sigma0 ** 2 + c_moment2) / (2 * a)


def deterministic_kl(lam, a, sigma, T=math.inf):
    """1/2 int_0^T (lam/sigma)^2 e^{-2(a+lam)s} ds for a unit initial gap."""
    k = 2 * (a + lam)
    return 0.5 * (lam / sigma) ** 2 * (1 - math.exp(-k * T)) / k


FROZEN = {
    # e^{-1}: noise-free OU from 1 at t = 1
    "ou_ode_t1": 0.36787944117144233,
    # -(1 - e^{-1}): jump-free process with unit compensator drift from 0 at t = 1
    "aux_ode_t1": -0.6321205588285577,
    "stationary_var_default": 0.625,
    "kl_deterministic": 1.0 / 3.0,
    "no_jump_rate1_t2": 0.1353352832366127,
    "ot_3x3": 0.2 / 3.0,
    "skorohod_steps": 0.22314355131420976,  # log 1.25
    "stationary_var_pure_ou": 0.5,
}
