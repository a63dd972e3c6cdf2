"""Wasserstein distances between empirical measures of segments.

Ground costs are capped at 1, so every reported value is an upper bound on
the transport distance for (Skorohod distance) ^ 1: the sup distance and our
Skorohod upper bound both dominate the Skorohod distance.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .errors import InvalidParameterError, SolverCapError
from .kernels import pairwise_window_sup
from .segment import TOL, Segment, segment_at, skorohod_upper, sup_distance
from .sim import SimConfig, iter_batch, merge_chunks

GROUND_METRICS = ("sup_capped", "skorohod_upper_capped")
EXACT_CAP = 512
REFERENCE_OFFSET = 1 << 40


@dataclass(frozen=True)
class EmpiricalMeasure:
    atoms: tuple
    weights: np.ndarray
    ground_metric: str = "sup_capped"

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise InvalidParameterError("empirical measure needs at least one atom")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != len(atoms):
            raise InvalidParameterError("one weight per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("weights must be nonnegative and sum to 1")
        if self.ground_metric not in GROUND_METRICS:
            raise InvalidParameterError(f"unknown ground metric {self.ground_metric!r}")
        tau, dim = atoms[0].tau, atoms[0].dim
        if any(abs(a.tau - tau) > TOL or a.dim != dim for a in atoms):
            raise InvalidParameterError("atoms must share tau and dimension")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms, ground_metric="sup_capped"):
        atoms = tuple(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / max(len(atoms), 1)), ground_metric)

    def __len__(self):
        return len(self.atoms)

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))


@dataclass
class TransportPlan:
    cost: float
    plan: np.ndarray
    solver: str
    iterations: int = 0
    epsilon: float | None = None
    converged: bool = True
    marginal_error: float = 0.0

    def meta(self):
        return dict(cost=self.cost, solver=self.solver, iterations=self.iterations, epsilon=self.epsilon,
                    converged=self.converged, marginal_error=self.marginal_error)


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, metric=None):
    metric = metric or mu.ground_metric
    if metric not in GROUND_METRICS:
        raise InvalidParameterError(f"unknown ground metric {metric!r}")
    dist = sup_distance if metric == "sup_capped" else skorohod_upper
    C = np.empty((len(mu), len(nu)))
    for i, a in enumerate(mu.atoms):
        for j, b in enumerate(nu.atoms):
            C[i, j] = dist(a, b)
    return np.minimum(C, 1.0)


def _marginal_error(P, a, b):
    return float(max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max()))


def solve_exact(C, a=None, b=None):
    """Exact discrete optimal transport for cost ``C``.

    Equal-size uniform problems go to the assignment solver; anything else to
    the transport LP (HiGHS).
    """
    C = np.asarray(C, dtype=float)
    na, nb = C.shape
    a = np.full(na, 1.0 / na) if a is None else np.asarray(a, dtype=float)
    b = np.full(nb, 1.0 / nb) if b is None else np.asarray(b, dtype=float)
    if na == nb and np.all(a == a[0]) and np.all(b == b[0]):
        rows, cols = linear_sum_assignment(C)
        P = np.zeros_like(C)
        P[rows, cols] = 1.0 / na
        return TransportPlan(float(C[rows, cols].sum() / na), P, "assignment")
    A_eq = np.zeros((na + nb, na * nb))
    for i in range(na):
        A_eq[i, i * nb:(i + 1) * nb] = 1.0
    for j in range(nb):
        A_eq[na + j, j::nb] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise InvalidParameterError(f"transport LP failed: {res.message}")
    P = res.x.reshape(na, nb)
    return TransportPlan(float(np.sum(P * C)), P, "linprog", int(getattr(res, "nit", 0) or 0),
                         marginal_error=_marginal_error(P, a, b))


def wasserstein_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cap=EXACT_CAP) -> TransportPlan:
    if len(mu) > cap or len(nu) > cap:
        raise SolverCapError(f"{max(len(mu), len(nu))} atoms exceed the exact cap {cap}; "
                             "use wasserstein_sinkhorn")
    return solve_exact(cost_matrix(mu, nu), mu.weights, nu.weights)


def round_to_feasible(P, a, b):
    """Project a near-feasible plan onto the transport polytope (row/column scaling plus rank-one fix)."""
    r = P.sum(axis=1)
    P = P * np.minimum(a / np.where(r > 0, r, 1.0), 1.0)[:, None]
    c = P.sum(axis=0)
    P = P * np.minimum(b / np.where(c > 0, c, 1.0), 1.0)[None, :]
    er = a - P.sum(axis=1)
    ec = b - P.sum(axis=0)
    s = er.sum()
    if s > 0:
        P = P + np.outer(er, ec) / s
    return P


def sinkhorn(C, a=None, b=None, epsilon=None, max_iter=10_000, tol=1e-12):
    """Log-domain Sinkhorn; the returned plan is rounded to exact marginals."""
    C = np.asarray(C, dtype=float)
    na, nb = C.shape
    a = np.full(na, 1.0 / na) if a is None else np.asarray(a, dtype=float)
    b = np.full(nb, 1.0 / nb) if b is None else np.asarray(b, dtype=float)
    if epsilon is None:
        med = float(np.median(C))
        epsilon = 1e-2 * med if med > 0 else 1e-2
    if not epsilon > 0:
        raise InvalidParameterError("epsilon must be positive")
    la, lb = np.log(a), np.log(b)
    f, g = np.zeros(na), np.zeros(nb)
    converged, it = False, 0
    for it in range(1, max_iter + 1):
        f = epsilon * (la - logsumexp((g[None, :] - C) / epsilon, axis=1))
        g = epsilon * (lb - logsumexp((f[:, None] - C) / epsilon, axis=0))
        if it % 10 == 0 or it == max_iter:
            P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
            if np.abs(P.sum(axis=1) - a).max() <= tol:
                converged = True
                break
    P = round_to_feasible(np.exp((f[:, None] + g[None, :] - C) / epsilon), a, b)
    return TransportPlan(float(np.sum(P * C)), P, "sinkhorn", it, float(epsilon), converged,
                         _marginal_error(P, a, b))


def wasserstein_sinkhorn(mu: EmpiricalMeasure, nu: EmpiricalMeasure, epsilon=None, max_iter=10_000,
                         tol=1e-12) -> TransportPlan:
    return sinkhorn(cost_matrix(mu, nu), mu.weights, nu.weights, epsilon, max_iter, tol)


def w1_sorted(x, y):
    """W_1 between equal-size scalar samples by sorted (quantile) matching."""
    x, y = np.sort(np.ravel(x)), np.sort(np.ravel(y))
    if x.size != y.size:
        raise InvalidParameterError("sorted matching needs equal sample sizes")
    return float(np.mean(np.abs(x - y)))


# ---------------------------------------------------------------------------
# time marginals of the process

@dataclass(frozen=True)
class ReferenceEnsemble:
    """Independent paths run to ``horizon`` as a proxy sample of the invariant law."""

    initial: Segment
    horizon: float
    path_offset: int = REFERENCE_OFFSET


@dataclass
class WassersteinCurve:
    mode: str
    times: list
    w_upper: list
    stderr: list
    n_samples: int
    solver: list
    metric: str
    fitted_slope: float = float("nan")
    fitted_intercept: float = float("nan")
    slope_stderr: float = float("nan")
    slope_z: float = float("nan")
    decreasing_trend: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def csv_rows(self):
        return [(t, w, s, self.n_samples, sv) for t, w, s, sv in zip(self.times, self.w_upper, self.stderr,
                                                                   self.solver)]


def _window(chunk, t, which="x"):
    """(P, L+1) window values and jumps shifted so the window is [-tau, 0]."""
    g = chunk.index(t)
    path = chunk.X if which == "x" else chunk.Y
    A = path[:, g - chunk.L:g + 1, 0]
    off, jt, pre, post = chunk.scalar_jumps(which)
    return A, (off, jt - t, pre, post)


def window_cost(chunk_a, t_a, chunk_b, t_b):
    """min(sup distance, 1) between every window pair of two scalar ensembles."""
    A, ja = _window(chunk_a, t_a)
    B, jb = _window(chunk_b, t_b)
    L = chunk_a.L
    return np.minimum(pairwise_window_sup(A, B, L, L, chunk_a.dt, ja, jb), 1.0)


def _segment_cost(chunk_a, t_a, init_a, chunk_b, t_b, init_b):
    sa = [segment_at(chunk_a.trajectory(i, initial=init_a), t_a) for i in range(chunk_a.size)]
    sb = [segment_at(chunk_b.trajectory(j, initial=init_b), t_b) for j in range(chunk_b.size)]
    C = np.empty((len(sa), len(sb)))
    for i, a in enumerate(sa):
        for j, b in enumerate(sb):
            C[i, j] = skorohod_upper(a, b)
    return np.minimum(C, 1.0)


def _solve(C, cap, epsilon):
    if max(C.shape) <= cap:
        return solve_exact(C)
    return sinkhorn(C, epsilon=epsilon)


def _curve_fit(curve):
    from .coupling import weighted_loglinear_fit

    w, se = np.asarray(curve.w_upper), np.asarray(curve.stderr)
    pos = w > 0
    if pos.sum() >= 2:
        s, i, sse = weighted_loglinear_fit(np.asarray(curve.times)[pos], w[pos], se[pos])
        curve.fitted_slope, curve.fitted_intercept, curve.slope_stderr = s, i, sse
        curve.slope_z = s / sse if sse > 0 else (-math.inf if s < 0 else math.inf)
    # no significant rise from the start, nor a rebound from the lowest point
    k = int(np.argmin(w))
    curve.decreasing_trend = bool(w[-1] <= w[0] + 4 * math.hypot(se[0], se[-1])
                                  and w[-1] <= w[k] + 4 * math.hypot(se[k], se[-1]))
    return curve


def wasserstein_time_marginals(model, xi: Segment, eta_or_reference, times, n_samples, cfg: SimConfig,
                               metric="sup_capped", n_boot=200, cap=EXACT_CAP, epsilon=None):
    """Upper-bound estimates of the capped Wasserstein distance at each time.

    With a segment ``eta`` both ensembles use the same path indices (common
    random numbers) and the bootstrap resamples pairs jointly.  With a
    :class:`ReferenceEnsemble` the reference paths are independent and each
    side is resampled separately.  Only scalar models are supported.
    """
    times = [float(t) for t in times]
    if not times:
        raise InvalidParameterError("need at least one time")
    if min(times) < model.tau - TOL:
        raise InvalidParameterError("distributional reports need t >= tau")
    if model.n != 1:
        raise InvalidParameterError("time-marginal curves support scalar models only")
    if metric not in GROUND_METRICS:
        raise InvalidParameterError(f"unknown ground metric {metric!r}")
    run_cfg = cfg.replace(horizon=max(times))
    side_a = merge_chunks(list(iter_batch(model, xi, run_cfg, n_samples)))
    if isinstance(eta_or_reference, ReferenceEnsemble):
        ref = eta_or_reference
        mode, init_b = "reference", ref.initial
        side_b = merge_chunks(list(iter_batch(model, ref.initial, cfg.replace(horizon=ref.horizon),
                                              n_samples, path_offset=ref.path_offset)))
        t_b = lambda t: ref.horizon
    else:
        mode, init_b = "pair", eta_or_reference
        side_b = merge_chunks(list(iter_batch(model, eta_or_reference, run_cfg, n_samples)))
        t_b = lambda t: t
    boot = np.random.default_rng([cfg.master_seed, 0x626F6F74])
    n = n_samples
    idx_a = boot.integers(0, n, size=(n_boot, n))
    idx_b = idx_a if mode == "pair" else boot.integers(0, n, size=(n_boot, n))
    ws, ses, solvers = [], [], []
    for t in times:
        if metric == "sup_capped":
            C = window_cost(side_a, t, side_b, t_b(t))
        else:
            C = _segment_cost(side_a, t, xi, side_b, t_b(t), init_b)
        plan = _solve(C, cap, epsilon)
        reps = np.array([_solve(C[np.ix_(ia, ib)], cap, epsilon).cost for ia, ib in zip(idx_a, idx_b)])
        ws.append(plan.cost)
        ses.append(float(reps.std(ddof=1)) if n_boot > 1 else 0.0)
        solvers.append(plan.solver)
    curve = WassersteinCurve(mode, times, ws, ses, n, solvers, metric)
    return _curve_fit(curve)
