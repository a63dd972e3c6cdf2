"""Rate bounds, Lyapunov drift, support and small-set checks, and the combined verdict."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize, stats

from .errors import DivergenceError, InvalidParameterError
from .segment import Segment, sup_norm
from .sim import SimConfig, iter_batch

F_BUILTINS = {
    "linear": lambda u: u,
    "sqrt": lambda u: np.sqrt(u),
}
V_BUILTINS = ("abs0", "sup")
PROBE_GRID = np.concatenate([[0.0], np.logspace(-6, 12, 181)])
CP_LEVEL = 0.95


def _f_handle(f):
    if callable(f):
        return f
    try:
        return F_BUILTINS[f]
    except KeyError:
        raise InvalidParameterError(f"unknown f {f!r}; builtins: {sorted(F_BUILTINS)}") from None


@dataclass(frozen=True)
class RatePolicy:
    """Lyapunov data (V, f, K, delta) and the rate constants C1, C2.

    ``f`` is a builtin name or a callable; it must vanish at 0, increase on
    the probe grid and keep growing (a growth probe rejects bounded choices
    such as u / (1 + u)).
    """

    f: object = "linear"
    V: str = "abs0"
    delta: float = 0.5
    C1: float = 1.0
    C2: float = 1.0
    K: float | None = None

    def __post_init__(self):
        if self.V not in V_BUILTINS:
            raise InvalidParameterError(f"unknown V {self.V!r}; builtins: {V_BUILTINS}")
        if not 0 < self.delta < 1:
            raise InvalidParameterError("delta must lie in (0, 1)")
        if not (self.C1 > 0 and self.C2 > 0):
            raise InvalidParameterError("C1 and C2 must be positive")
        fn = _f_handle(self.f)
        vals = np.asarray([fn(u) for u in PROBE_GRID], dtype=float)
        if abs(vals[0]) > 1e-12:
            raise InvalidParameterError("f(0) must be 0")
        if not np.all(np.diff(vals) > 0):
            raise InvalidParameterError("f is not increasing on the probe grid")
        if not vals[-1] > 1.5 * fn(1e6):
            raise InvalidParameterError("f does not grow without bound on the probe grid")

    @property
    def fn(self):
        return _f_handle(self.f)

    def V_of(self, seg: Segment):
        if self.V == "abs0":
            return float(np.sum(seg.values[-1] ** 2))
        return sup_norm(seg) ** 2

    def F(self, x):
        """int_1^x du / f(u), by quadrature in v = log u."""
        fn = self.fn
        if x <= 0:
            raise InvalidParameterError("F is defined for x > 0")
        val, _ = integrate.quad(lambda v: math.exp(v) / fn(math.exp(v)), 0.0, math.log(x),
                                epsabs=1e-13, epsrel=1e-13, limit=200)
        return val

    def F_inv(self, s):
        """Inverse of F on [0, inf) by bracketing and Brent's method in log x."""
        if s < 0:
            raise InvalidParameterError("F^{-1} is evaluated at s >= 0")
        if s == 0:
            return 1.0
        G = lambda v: self.F(math.exp(v)) - s
        hi = 1.0
        try:
            while G(hi) < 0:
                hi *= 2.0
                if hi > 700:
                    raise OverflowError
        except OverflowError:
            # superlinear f: F is bounded and s lies beyond its supremum
            raise InvalidParameterError(f"F^{{-1}}({s}) is undefined (F stays below s)") from None
        v = optimize.brentq(G, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        return math.exp(v)


def rate_bound(policy: RatePolicy, xi, t):
    """C1 (1 + f(V(xi))^delta) / f(F^{-1}(C2 t))^delta.

    ``xi`` may be a segment or the value V(xi) itself.
    """
    if t < 0:
        raise InvalidParameterError("t must be nonnegative")
    v = policy.V_of(xi) if isinstance(xi, Segment) else float(xi)
    fn, d = policy.fn, policy.delta
    return policy.C1 * (1.0 + fn(v) ** d) / fn(policy.F_inv(policy.C2 * t)) ** d


def clopper_pearson(k, n, level=CP_LEVEL):
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def default_probes(tau, R, n_random=3, seed=0):
    """Extreme points of the sup-ball of radius R plus a few rough segments inside it."""
    from .model import mixed_segment_sampler

    probes = [Segment.constant(tau, R), Segment.constant(tau, -R), Segment.constant(tau, 0.0),
              Segment.step(tau, -tau / 2, -R, R)]
    if n_random:
        batch = mixed_segment_sampler(tau)(np.random.default_rng(seed), n_random)
        for vals in batch.phi:
            peak = np.max(np.abs(vals))
            scale = R / peak if peak > 0 else 0.0
            probes.append(Segment(tau, batch.grid, vals * scale))
    return probes


def drift_constant(model):
    """Constant K with 2<x, b> + |sigma|^2 + gamma^2 int c^2 dnu <= -|x|^2 + K for the builtins.

    Valid for a >= 1/2; with a delay gain the extra g1^2 / (2a - 1) absorbs
    the cross term.
    """
    kp = model.params
    if not kp:
        return model.K
    a, g1 = kp["a"], kp["g1"]
    K = kp["sigma0"] ** 2 + kp["gamma0"] ** 2 * model.c_moment2
    if g1 and a > 0.5:
        K += g1 * g1 / (2 * a - 1)
    return K


# ---------------------------------------------------------------------------
# Lyapunov drift

@dataclass
class DriftRow:
    probe: int
    t: float
    V0: float
    PtV: float
    integral_fV: float
    Kt: float
    slack: float
    stderr: float
    passed: bool


@dataclass
class DriftReport:
    K: float
    rows: list
    passed: bool
    diverged: bool = False

    def to_dict(self):
        return asdict(self)


def _V_series(chunk, policy, k_max):
    """V(X_s) on grid points s = 0, dt, ..., k_max dt, shape (P, k_max + 1)."""
    if policy.V == "abs0":
        x = chunk.X[:, chunk.L:chunk.L + k_max + 1]
        return np.sum(x * x, axis=2)
    return np.stack([chunk.window_sup(k * chunk.dt) ** 2 for k in range(k_max + 1)], axis=1)


def lyapunov_drift_check(model, policy: RatePolicy, xi_probes, t_grid, n_outer, n_inner, cfg: SimConfig):
    """P_t V(xi) <= V(xi) - int_0^t P_s(f o V)(xi) ds + K t, within 4 standard errors.

    All points of ``t_grid`` reuse the same paths.  The standard error comes
    from ``n_outer`` batch means of ``n_inner`` paths each.
    """
    t_grid = sorted(float(t) for t in t_grid)
    if not t_grid or t_grid[0] <= 0:
        raise InvalidParameterError("t_grid must be positive")
    if n_outer < 2 or n_inner < 1:
        raise InvalidParameterError("need n_outer >= 2 and n_inner >= 1")
    K = policy.K if policy.K is not None else drift_constant(model)
    fn = policy.fn
    run_cfg = cfg.replace(horizon=t_grid[-1])
    n_paths = n_outer * n_inner
    rows, diverged = [], False
    for pi, xi in enumerate(xi_probes):
        V0 = policy.V_of(xi)
        slack = {t: [] for t in t_grid}
        parts = {t: [] for t in t_grid}
        for ch in iter_batch(model, xi, run_cfg, n_paths):
            ks = [int(round(t / ch.dt)) for t in t_grid]
            Vs = _V_series(ch, policy, ks[-1])
            if not np.all(np.isfinite(Vs)):
                diverged = True
            fV = fn(Vs)
            cum = np.concatenate([np.zeros((Vs.shape[0], 1)),
                                  np.cumsum(0.5 * (fV[:, 1:] + fV[:, :-1]) * ch.dt, axis=1)], axis=1)
            for t, k in zip(t_grid, ks):
                slack[t].append(Vs[:, k] + cum[:, k] - V0 - K * t)
                parts[t].append((Vs[:, k], cum[:, k]))
        for t in t_grid:
            d = np.concatenate(slack[t])
            means = d.reshape(n_outer, n_inner).mean(axis=1)
            se = float(means.std(ddof=1) / math.sqrt(n_outer))
            PtV = float(np.concatenate([p[0] for p in parts[t]]).mean())
            I = float(np.concatenate([p[1] for p in parts[t]]).mean())
            m = float(d.mean())
            rows.append(DriftRow(pi, t, V0, PtV, I, K * t, m, se, bool(np.isfinite(m) and m <= 4 * se)))
    return DriftReport(K, rows, (not diverged) and all(r.passed for r in rows), diverged)


# ---------------------------------------------------------------------------
# support

@dataclass
class SupportRow:
    probe: int
    p_full: float
    p_aux: float
    se_full: float
    se_aux: float
    no_jump_fraction: float
    no_jump_expected: float
    no_jump_z: float
    cp_full: tuple
    cp_aux: tuple
    ordering_ok: bool
    no_jump_ok: bool
    inconclusive: bool


@dataclass
class SupportReport:
    R: float
    delta: float
    t: float
    n_paths: int
    rows: list
    passed: bool
    inconclusive: bool

    def to_dict(self):
        return asdict(self)

    def csv_rows(self):
        return [(r.probe, r.p_full, r.se_full, r.p_aux, r.se_aux, r.no_jump_fraction, r.no_jump_expected)
                for r in self.rows]


def _ball_hits(model, xi, cfg, n_paths, t, radius, aux):
    hits, nojump = 0, 0
    for ch in iter_batch(model, xi, cfg, n_paths, aux=aux):
        s = ch.window_sup(t)
        if not np.all(np.isfinite(s)):
            raise DivergenceError("non-finite state in support check", t)
        hits += int(np.count_nonzero(s <= radius))
        nojump += int(np.count_nonzero(ch.jump_counts(t) == 0))
    return hits, nojump


def support_check(model, R, delta_ball, t, n_paths, cfg: SimConfig, probes=None):
    """P(X_t in B_delta) for the full and the jump-free process from probes in B_R.

    Checks p_full >= p_aux e^{-nu t} - 4 se and that the fraction of paths
    without jumps by time t matches e^{-nu t}.
    """
    if t < model.tau - 1e-12:
        raise InvalidParameterError("support check needs t >= tau")
    probes = default_probes(model.tau, R) if probes is None else list(probes)
    for p in probes:
        if sup_norm(p) > R + 1e-12:
            raise InvalidParameterError("probe outside B_R")
    run_cfg = cfg.replace(horizon=t)
    q = math.exp(-model.jump_rate * t)
    rows = []
    for i, xi in enumerate(probes):
        hf, nj = _ball_hits(model, xi, run_cfg, n_paths, t, delta_ball, aux=False)
        ha, _ = _ball_hits(model, xi, run_cfg, n_paths, t, delta_ball, aux=True)
        pf, pa = hf / n_paths, ha / n_paths
        sf, sa = math.sqrt(pf * (1 - pf) / n_paths), math.sqrt(pa * (1 - pa) / n_paths)
        frac = nj / n_paths
        se_q = math.sqrt(q * (1 - q) / n_paths)
        z = (frac - q) / se_q if se_q > 0 else (0.0 if frac == q else math.inf)
        ordering = pf >= pa * q - 4 * math.hypot(sf, q * sa)
        rows.append(SupportRow(i, pf, pa, sf, sa, frac, q, z, clopper_pearson(hf, n_paths),
                               clopper_pearson(ha, n_paths), bool(ordering), bool(abs(z) <= 4),
                               hf == 0 and ha == 0))
    inconclusive = any(r.inconclusive for r in rows)
    passed = all(r.ordering_ok and r.no_jump_ok for r in rows) and not inconclusive
    return SupportReport(R, delta_ball, t, n_paths, rows, passed, inconclusive)


# ---------------------------------------------------------------------------
# second moment over the first delay window

@dataclass
class MomentReport:
    x0: list
    mean_sup_sq: list
    stderr: list
    exponent: float
    exponent_stderr: float
    slope: float
    intercept: float
    chebyshev_L: list
    chebyshev_prob: list
    chebyshev_ok: bool
    passed: bool
    diverged: bool = False

    def to_dict(self):
        return asdict(self)


def moment_bound_check(model, xi_probes, n_paths, cfg: SimConfig):
    """E sup_{0<=s<=tau} |X(s)|^2 against 1 + |xi(0)|^2.

    Passes when the log-log growth exponent is at most 1.1 (within two
    standard errors) and every estimate is finite.  Also checks the
    Chebyshev consequence P(||X_tau|| <= L) > 1/2 for L^2 = 2 (m + 4 se).
    """
    probes = list(xi_probes)
    if len(probes) < 2:
        raise InvalidParameterError("need at least two probes")
    run_cfg = cfg.replace(horizon=model.tau)
    x0, ms, ses, Ls, probs = [], [], [], [], []
    diverged = False
    for xi in probes:
        vals = []
        for ch in iter_batch(model, xi, run_cfg, n_paths):
            vals.append(ch.window_sup_range(0.0, model.tau) ** 2)
        v = np.concatenate(vals)
        if not np.all(np.isfinite(v)):
            diverged = True
        m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
        L = math.sqrt(2.0 * (m + 4 * se)) * (1 + 1e-12)
        x0.append(float(np.sum(xi.values[-1] ** 2)))
        ms.append(m)
        ses.append(se)
        Ls.append(L)
        probs.append(float(np.mean(np.sqrt(v) <= L)))
    x = np.log1p(np.asarray(x0))
    y = np.log(np.maximum(ms, np.finfo(float).tiny))
    if np.ptp(x) == 0:
        raise InvalidParameterError("probes need distinct |xi(0)|")
    (expo, icpt), cov = np.polyfit(x, y, 1, cov="unscaled") if len(probes) > 2 else (np.polyfit(x, y, 1), None)
    expo_se = 0.0
    if cov is not None:
        resid = y - (expo * x + icpt)
        s2 = float(resid @ resid) / max(len(x) - 2, 1)
        expo_se = float(math.sqrt(max(cov[0, 0] * s2, 0.0)))
    lin = np.polyfit(1.0 + np.asarray(x0), ms, 1)
    cheb = all(p > 0.5 for p in probs)
    passed = (not diverged) and expo <= 1.1 + 2 * expo_se and cheb
    return MomentReport(x0, ms, ses, float(expo), expo_se, float(lin[0]), float(lin[1]), Ls, probs, cheb,
                        bool(passed), diverged)


# ---------------------------------------------------------------------------
# small-set condition

@dataclass
class C2Report:
    case: str
    M: float
    epsilon: float
    t0: float
    d_diameter: float
    probes: int
    probabilities: list
    cp_lower: list
    min_probability: float
    min_cp_lower: float
    factors: dict = field(default_factory=dict)
    passed: bool = False
    inconclusive: bool = False

    def to_dict(self):
        return asdict(self)


def _ball_probabilities(model, probes, cfg, n_paths, t, radius):
    ps, lows = [], []
    for xi in probes:
        hits, _ = _ball_hits(model, xi, cfg.replace(horizon=t), n_paths, t, radius, aux=False)
        ps.append(hits / n_paths)
        lows.append(clopper_pearson(hits, n_paths)[0])
    return ps, lows


def condition_c2_report(model, M_level, epsilon, t0, n_paths, cfg: SimConfig, case="i", probes=None):
    """Estimate inf over B of P(X_{t0} in D) with D = B_{epsilon/2}.

    Case ``i``: B = {||phi||^2 <= M}.  Case ``ii``: B = {|phi(0)|^2 <= M};
    the bound is chained through the Chebyshev radius L from the moment
    check and a second step of length t0 - tau from the ball B_L.
    """
    tau = model.tau
    if t0 < tau - 1e-12:
        raise InvalidParameterError("t0 must be at least tau")
    if not (M_level > 0 and epsilon > 0):
        raise InvalidParameterError("M and epsilon must be positive")
    R = math.sqrt(M_level)
    if case == "i":
        probes = default_probes(tau, R) if probes is None else list(probes)
        ps, lows = _ball_probabilities(model, probes, cfg, n_paths, t0, epsilon / 2)
        factors = {}
    elif case == "ii":
        if t0 < 2 * tau - 1e-12:
            raise InvalidParameterError("case ii chains two steps and needs t0 >= 2 tau")
        if probes is None:
            probes = [Segment.constant(tau, R), Segment.constant(tau, -R), Segment.constant(tau, 0.0),
                      Segment.step(tau, -tau / 2, -2 * R, R)]
        mom = moment_bound_check(model, probes, n_paths, cfg)
        L = max(mom.chebyshev_L)
        first = min(mom.chebyshev_prob)
        first_lo = min(clopper_pearson(int(round(p * n_paths)), n_paths)[0] for p in mom.chebyshev_prob)
        inner = default_probes(tau, L)
        ps2, lows2 = _ball_probabilities(model, inner, cfg, n_paths, t0 - tau, epsilon / 2)
        ps = [first * p for p in ps2]
        lows = [max(first_lo, 0.5) * lo for lo in lows2]
        factors = dict(L=L, first_step=first, first_step_cp_lower=first_lo, second_step=ps2,
                       second_step_cp_lower=lows2, chebyshev_ok=mom.chebyshev_ok)
        probes = inner
    else:
        raise InvalidParameterError("case must be 'i' or 'ii'")
    min_lo = float(min(lows))
    inconclusive = min_lo <= 0.0
    return C2Report(case, M_level, epsilon, t0, epsilon, len(probes), ps, lows, float(min(ps)), min_lo,
                    factors, passed=not inconclusive, inconclusive=inconclusive)


# ---------------------------------------------------------------------------
# combined report

@dataclass
class ReportSettings:
    alpha: float = 0.5
    lam: float | None = None
    lambda_max: float = 2.0 ** 10
    c1_times: tuple = tuple(range(1, 11))
    c1_paths: int = 2000
    c2_case: str = "i"
    c2_M: float = 4.0
    c2_epsilon: float = 2.0
    c2_t0: float = 5.0
    c2_paths: int = 4000
    drift_t_grid: tuple = (0.5, 1.0, 1.5, 2.0)
    drift_outer: int = 20
    drift_inner: int = 200
    w_times: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    w_samples: int = 256
    w_boot: int = 200
    w_reference_horizon: float | None = None
    delta: float = 0.5


@dataclass
class ErgodicityReport:
    model: dict
    config_digest: str
    c1: dict
    c2: dict
    lyapunov: dict
    wasserstein: dict
    verdict: str
    reasons: list

    def to_dict(self):
        return dict(model=self.model, config_digest=self.config_digest, c1=self.c1, c2=self.c2,
                    lyapunov=self.lyapunov, wasserstein=self.wasserstein, verdict=self.verdict,
                    reasons=self.reasons)


def _model_dict(model):
    return dict(name=model.name, n=model.n, m=model.m, tau=model.tau, K=model.K,
                jump_rate=model.jump_rate, params=dict(model.params or {}))


def ergodicity_report(model, cfg: SimConfig, settings: ReportSettings | None = None, xi=None, eta=None,
                      config_digest=""):
    """Run every sub-check and combine them into one verdict.

    ``fail`` if any sub-check fails, else ``inconclusive`` if any is
    inconclusive, else ``pass``.
    """
    from .coupling import condition_c1_report
    from .errors import SelectionError
    from .transport import ReferenceEnsemble, wasserstein_time_marginals

    s = settings or ReportSettings()
    tau = model.tau
    xi = Segment.constant(tau, 1.0) if xi is None else xi
    eta = Segment.constant(tau, 0.0) if eta is None else eta
    fails, unsure = [], []

    try:
        c1 = condition_c1_report(model, [(xi, eta)], s.alpha, list(s.c1_times), cfg, s.c1_paths, s.lam,
                                 s.lambda_max)
        c1d = c1.to_dict()
        if not c1.passed:
            fails.append("c1")
    except SelectionError as e:
        c1d = dict(passed=False, error=str(e), best=e.best.to_dict() if e.best is not None else None)
        fails.append("c1")

    c2 = condition_c2_report(model, s.c2_M, s.c2_epsilon, s.c2_t0, s.c2_paths, cfg, s.c2_case)
    if c2.inconclusive:
        unsure.append("c2")

    policy = RatePolicy("linear", "abs0", s.delta)
    drift = lyapunov_drift_check(model, policy, [xi, eta, Segment.constant(tau, 2.0)], s.drift_t_grid,
                                 s.drift_outer, s.drift_inner, cfg)
    if not drift.passed:
        fails.append("lyapunov")

    times = list(s.w_times)
    pair = wasserstein_time_marginals(model, xi, eta, times, s.w_samples, cfg, n_boot=s.w_boot)
    ref = ReferenceEnsemble(Segment.constant(tau, 0.0),
                            s.w_reference_horizon or (max(times) + 20 * tau))
    from_xi = wasserstein_time_marginals(model, xi, ref, times, s.w_samples, cfg, n_boot=s.w_boot)
    from_eta = wasserstein_time_marginals(model, eta, ref, times, s.w_samples, cfg, n_boot=s.w_boot)
    headline = bool(pair.fitted_slope < 0 and abs(pair.slope_z) > 3 and pair.decreasing_trend)
    terminal_gap = abs(from_xi.w_upper[-1] - from_eta.w_upper[-1])
    terminal_ok = terminal_gap <= 4 * math.hypot(from_xi.stderr[-1], from_eta.stderr[-1])
    trends_ok = from_xi.decreasing_trend and from_eta.decreasing_trend
    fitted = {}
    if headline:
        C2 = -pair.fitted_slope / s.delta
        fitted = dict(C2=C2, C1=math.exp(pair.fitted_intercept) / (1 + policy.V_of(xi) ** s.delta))
    if not headline:
        fails.append("wasserstein_decay")
    if not (terminal_ok and trends_ok):
        fails.append("wasserstein_reference")
    wd = dict(pair=pair.to_dict(), reference_from_xi=from_xi.to_dict(), reference_from_eta=from_eta.to_dict(),
              headline_pass=headline, terminal_gap=terminal_gap, terminal_ok=bool(terminal_ok),
              trends_ok=bool(trends_ok), rate_fit=fitted)
    verdict = "fail" if fails else ("inconclusive" if unsure else "pass")
    return ErgodicityReport(_model_dict(model), config_digest, c1d, c2.to_dict(), drift.to_dict(), wd, verdict,
                            fails + unsure)
