"""Generalized coupling with drift correction lambda (X - Y).

X solves the delay jump-diffusion from xi.  Y starts from eta, shares the
Brownian increments and the jump stream, uses its own jump coefficient
gamma(Y_{t-}) and gets the extra drift lambda (X(t) - Y(t)).  Equivalently Y
is the same equation driven by the shifted noise
dW^lambda = theta_0 dt + dW with theta_0 = lambda sigma^{-1}(Y_t)(X(t) - Y(t)),
so its law differs from P_t(eta, .) by at most the Girsanov/KL budget.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateFitError, InvalidModelError, InvalidParameterError, SelectionError
from .segment import Segment, sup_distance
from .sim import SimConfig, Trajectory, iter_batch, merge_chunks, simulate

DEFAULT_LAMBDA_MAX = 2.0 ** 10
REL_SE_FLOOR = 1e-6


@dataclass
class CoupledRun:
    """A batch of coupled pairs (one pair when built by :func:`simulate_coupled`)."""

    chunk: object
    xi: Segment
    eta: Segment
    lam: float
    cfg: SimConfig
    model: object = None

    @property
    def size(self):
        return self.chunk.size

    @property
    def x(self) -> Trajectory:
        return self.chunk.trajectory(0, "x", initial=self.xi)

    @property
    def y(self) -> Trajectory:
        return self.chunk.trajectory(0, "y", initial=self.eta)

    @property
    def kl_integrand_log(self):
        """Per-step int |theta_0|^2 ds over each dt step, shape (P, N)."""
        return self.chunk.kl

    @property
    def girsanov_log_weight(self):
        """-int theta_0 . dW - 1/2 int |theta_0|^2 ds per pair."""
        return self.chunk.logw

    def kl_integral(self, t0=0.0, t1=None):
        """Per-pair 1/2 int_{t0}^{t1} |theta_0|^2 ds."""
        return 0.5 * self.chunk.kl_integral(t0, t1)


def _check_pair(model, xi, eta, lam):
    for s in (xi, eta):
        if abs(s.tau - model.tau) > 1e-12:
            raise InvalidParameterError("segment tau differs from model tau")
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative")


def simulate_coupled(model, xi: Segment, eta: Segment, lam: float, cfg: SimConfig) -> CoupledRun:
    """One coupled pair for path ``cfg.path_index``."""
    return coupled_batch(model, xi, eta, lam, cfg, 1, path_offset=cfg.path_index)


def coupled_batch(model, xi, eta, lam, cfg, n_paths, path_offset=0, keep_noise=False) -> CoupledRun:
    _check_pair(model, xi, eta, lam)
    chunks = list(iter_batch(model, xi, cfg, n_paths, eta=eta, lam=lam, path_offset=path_offset,
                             keep_noise=keep_noise))
    return CoupledRun(merge_chunks(chunks), xi, eta, lam, cfg, model)


# ---------------------------------------------------------------------------
# decay of E ||X_t - Y_t||^2

@dataclass
class DecayFit:
    alpha_target: float
    lambda_used: float
    kappa: float
    K_prime: float
    times: list
    mean_sq: list
    stderr: list
    log_mean_sq: list
    log_stderr: list
    fitted_slope: float
    fitted_intercept: float
    slope_stderr: float
    theoretical_prefactor: float
    gap_sq: float
    bound: list
    mean_abs: list = field(default_factory=list)
    mean_abs_stderr: list = field(default_factory=list)
    slope_tol: float = 0.0
    pass_slope: bool = False
    pass_prefactor: bool = False
    n_paths: int = 0

    @property
    def passed(self):
        return self.pass_slope and self.pass_prefactor

    def to_dict(self):
        return asdict(self)

    def csv_rows(self):
        return [(t, m, s, b) for t, m, s, b in zip(self.times, self.mean_sq, self.stderr, self.bound)]


@dataclass
class _CoupledStats:
    times: np.ndarray
    sq_sum: np.ndarray
    sq_sum2: np.ndarray
    abs_sum: np.ndarray
    abs_sum2: np.ndarray
    kl: np.ndarray          # per pair 1/2 int |theta|^2
    n: int

    def mean_se(self, s1, s2):
        m = s1 / self.n
        var = np.maximum(s2 / self.n - m * m, 0.0) * self.n / max(self.n - 1, 1)
        return m, np.sqrt(var / self.n)


def _coupled_stats(model, xi, eta, lam, cfg, times, n_paths, path_offset=0):
    times = np.asarray(sorted(times), dtype=float)
    if times.size == 0 or times[0] <= 0:
        raise InvalidParameterError("times must be strictly positive")
    run_cfg = cfg.replace(horizon=float(max(times[-1], cfg.horizon)))
    _check_pair(model, xi, eta, lam)
    R = times.size
    acc = dict(sq_sum=np.zeros(R), sq_sum2=np.zeros(R), abs_sum=np.zeros(R), abs_sum2=np.zeros(R))
    kls = []
    for ch in iter_batch(model, xi, run_cfg, n_paths, eta=eta, lam=lam, path_offset=path_offset):
        for r, t in enumerate(times):
            d = ch.window_sup(t, "diff")
            acc["sq_sum"][r] += np.sum(d * d)
            acc["sq_sum2"][r] += np.sum(d ** 4)
            acc["abs_sum"][r] += np.sum(d)
            acc["abs_sum2"][r] += np.sum(d * d)
        kls.append(0.5 * ch.kl_integral())
    return _CoupledStats(times, kl=np.concatenate(kls), n=n_paths, **acc)


def weighted_loglinear_fit(t, mean, se):
    """Weighted least squares of log(mean) on t, weights (mean/se)^2 with a relative floor.

    Returns slope, intercept and a slope standard error inflated by the
    reduced chi-square when that exceeds one.
    """
    t = np.asarray(t, dtype=float)
    mean = np.asarray(mean, dtype=float)
    rel = np.maximum(np.asarray(se, dtype=float) / np.where(mean > 0, mean, 1.0), REL_SE_FLOOR)
    y = np.log(np.maximum(mean, np.finfo(float).tiny))
    w = 1.0 / rel ** 2
    W = w.sum()
    tb, yb = np.sum(w * t) / W, np.sum(w * y) / W
    stt = np.sum(w * (t - tb) ** 2)
    if stt <= 0:
        raise DegenerateFitError("need at least two distinct times")
    slope = np.sum(w * (t - tb) * (y - yb)) / stt
    icpt = yb - slope * tb
    resid = y - (icpt + slope * t)
    dof = t.size - 2
    scale = max(1.0, np.sum(w * resid ** 2) / dof) if dof > 0 else 1.0
    return float(slope), float(icpt), float(math.sqrt(scale / stt))


def _fit_from_stats(stats, model, xi, eta, lam, alpha, slope_tol):
    gap = sup_distance(xi, eta)
    if gap == 0:
        raise DegenerateFitError("xi and eta coincide; the decay fit needs xi != eta")
    m, se = stats.mean_se(stats.sq_sum, stats.sq_sum2)
    ma, sea = stats.mean_se(stats.abs_sum, stats.abs_sum2)
    slope, icpt, sse = weighted_loglinear_fit(stats.times, m, se)
    pref = 4.0 * math.exp(alpha * model.tau)
    bound = pref * gap ** 2 * np.exp(-alpha * stats.times)
    rel = np.where(m > 0, se / np.where(m > 0, m, 1.0), 0.0)
    with np.errstate(divide="ignore"):
        log_se = np.where(m > 0, rel, np.inf)
    tol = 0.1 * alpha if slope_tol is None else slope_tol
    return DecayFit(
        alpha_target=alpha, lambda_used=lam, kappa=2 * lam - alpha, K_prime=model.K + model.K ** 2,
        times=stats.times.tolist(), mean_sq=m.tolist(), stderr=se.tolist(),
        log_mean_sq=np.log(np.maximum(m, np.finfo(float).tiny)).tolist(), log_stderr=log_se.tolist(),
        fitted_slope=slope, fitted_intercept=icpt, slope_stderr=sse, theoretical_prefactor=pref,
        gap_sq=gap ** 2, bound=bound.tolist(), mean_abs=ma.tolist(), mean_abs_stderr=sea.tolist(),
        slope_tol=tol, pass_slope=bool(slope <= -alpha + tol),
        pass_prefactor=bool(np.all(m <= bound * (1 + 4 * rel))), n_paths=stats.n)


def estimate_decay(model, xi, eta, lam, alpha, times, n_paths, cfg, slope_tol=None) -> DecayFit:
    """Monte Carlo E||X_t - Y_t||^2_inf at ``times`` and its log-linear fit.

    ``pass_slope``: fitted slope <= -alpha + slope_tol (default 0.1 alpha).
    ``pass_prefactor``: every point below 4 e^{alpha tau} ||xi - eta||^2 e^{-alpha t}
    inflated by four relative standard errors.
    """
    if n_paths < 1:
        raise InvalidParameterError("n_paths must be positive")
    if sup_distance(xi, eta) == 0:
        raise DegenerateFitError("xi and eta coincide; the decay fit needs xi != eta")
    stats = _coupled_stats(model, xi, eta, lam, cfg, times, n_paths)
    return _fit_from_stats(stats, model, xi, eta, lam, alpha, slope_tol)


def select_lambda(model, xi, eta, alpha, cfg, lambda_max=DEFAULT_LAMBDA_MAX, times=None,
                  n_paths=1000, slope_tol=None, return_fit=False):
    """Doubling search for a coupling strength whose pilot decay fit passes.

    Probes lambda = max(1, 2 alpha), then doubles up to ``lambda_max``; pilots
    use ``n_paths // 10`` pairs.  The first passing value is > alpha.
    """
    if not alpha > 0:
        raise InvalidParameterError("alpha must be positive")
    if times is None:
        times = [model.tau * k for k in range(1, 11)]
    pilot = max(n_paths // 10, 10)
    lam = max(1.0, 2.0 * alpha)
    best = None
    while lam <= lambda_max:
        fit = estimate_decay(model, xi, eta, lam, alpha, times, pilot, cfg, slope_tol)
        if fit.passed:
            return (lam, fit) if return_fit else lam
        if best is None or fit.fitted_slope < best.fitted_slope:
            best = fit
        lam *= 2.0
    if best is None:
        raise SelectionError(f"first probe lambda={max(1.0, 2.0 * alpha)} exceeds lambda_max={lambda_max}",
                             best=None)
    raise SelectionError(f"no lambda <= {lambda_max} passed the pilot decay test "
                         f"(best slope {best.fitted_slope:.4g} at lambda={best.lambda_used})", best=best)


# ---------------------------------------------------------------------------
# KL / total variation

@dataclass
class KLReport:
    kl: float
    kl_stderr: float
    tv_bound: float
    closed_bound: float | None
    horizon: float
    n_paths: int

    def to_dict(self):
        return asdict(self)


def pinsker(kl):
    """Total variation bound sqrt(KL / 2)."""
    return math.sqrt(max(kl, 0.0) / 2.0)


def closed_tv_bound(lam, K, alpha, tau, gap):
    """lambda K sqrt(C) ||xi - eta|| / (2 sqrt(alpha)) with C = 4 e^{alpha tau}."""
    return lam * K * math.sqrt(4.0 * math.exp(alpha * tau)) * gap / (2.0 * math.sqrt(alpha))


def _kl_report(kl_per_path, lam, K, alpha, tau, gap, horizon):
    kl_per_path = np.asarray(kl_per_path, dtype=float)
    if kl_per_path.size == 0:
        raise InvalidParameterError("empty batch")
    if not np.all(np.isfinite(kl_per_path)):
        raise InvalidModelError("sigma(Y) is singular along the coupled run; the KL functional is undefined")
    kl = float(kl_per_path.mean())
    se = float(kl_per_path.std(ddof=1) / math.sqrt(kl_per_path.size)) if kl_per_path.size > 1 else 0.0
    pb = None if alpha is None else closed_tv_bound(lam, K, alpha, tau, gap)
    return KLReport(kl, se, pinsker(kl), pb, horizon, int(kl_per_path.size))


def kl_and_tv(runs: CoupledRun, alpha=None) -> KLReport:
    """KL = E 1/2 int_0^T |theta_0|^2 ds (truncated at the run horizon) and its Pinsker bound."""
    if runs.size == 0:
        raise InvalidParameterError("empty batch")
    gap = sup_distance(runs.xi, runs.eta)
    return _kl_report(runs.kl_integral(), runs.lam, runs.model.K, alpha, runs.model.tau, gap,
                      runs.cfg.horizon)


# ---------------------------------------------------------------------------
# importance reweighting check

BUILTIN_FUNCTIONALS = {
    "mean": lambda x: x[:, 0],
    "ball": lambda x: (np.linalg.norm(x, axis=1) <= 1.0).astype(float),
}

LOG_WEIGHT_CAP = 700.0


@dataclass
class ReweightReport:
    weighted_mean: float
    weighted_se: float
    plain_mean: float
    plain_se: float
    z: float
    n_paths: int
    n_truncated: int
    mean_weight: float

    def to_dict(self):
        return asdict(self)


def importance_reweight_check(model, eta, template, test_functional="mean", n_paths=10_000):
    """Compare E[g(Y_T) exp(log-weight)] from coupled runs with E[g(X^eta_T)].

    ``template`` = (xi, lam, cfg).  The plain ensemble uses path indices
    disjoint from the coupled one, so the two estimators are independent.
    """
    xi, lam, cfg = template
    g = BUILTIN_FUNCTIONALS[test_functional] if isinstance(test_functional, str) else test_functional
    T = cfg.horizon
    vals_w, vals_p, n_trunc, wsum = [], [], 0, 0.0
    for ch in iter_batch(model, xi, cfg, n_paths, eta=eta, lam=lam, path_offset=0):
        lw = ch.logw
        n_trunc += int(np.count_nonzero(lw > LOG_WEIGHT_CAP))
        w = np.exp(np.minimum(lw, LOG_WEIGHT_CAP))
        wsum += float(w.sum())
        vals_w.append(g(ch.values_at(T, "y")) * w)
    for ch in iter_batch(model, eta, cfg, n_paths, path_offset=n_paths):
        vals_p.append(g(ch.values_at(T, "x")))
    vw, vp = np.concatenate(vals_w), np.concatenate(vals_p)
    mw, sw = float(vw.mean()), float(vw.std(ddof=1) / math.sqrt(vw.size))
    mp, sp = float(vp.mean()), float(vp.std(ddof=1) / math.sqrt(vp.size))
    den = math.hypot(sw, sp)
    z = (mw - mp) / den if den > 0 else (0.0 if mw == mp else math.inf)
    return ReweightReport(mw, sw, mp, sp, float(z), n_paths, n_trunc, wsum / n_paths)


# ---------------------------------------------------------------------------
# Condition C1 report

@dataclass
class C1PairResult:
    gap: float
    lambda0: float
    decay: DecayFit
    kl: KLReport
    r_bound: list
    pass_first_moment: bool
    pass_tv: bool

    @property
    def passed(self):
        return self.decay.passed and self.pass_first_moment and self.pass_tv


@dataclass
class C1Report:
    alpha: float
    pairs: list
    passed: bool

    def to_dict(self):
        out = []
        for p in self.pairs:
            out.append(dict(gap=p.gap, lambda0=p.lambda0, decay=p.decay.to_dict(), kl=p.kl.to_dict(),
                            r_bound=p.r_bound, pass_first_moment=p.pass_first_moment,
                            pass_tv=p.pass_tv, passed=p.passed))
        return dict(alpha=self.alpha, pairs=out, passed=self.passed)


def condition_c1_report(model, pairs, alpha, times, cfg, n_paths=2000, lam=None,
                        lambda_max=DEFAULT_LAMBDA_MAX) -> C1Report:
    """Both items of the coupling condition, per initial pair.

    Item 2 uses r(t) = sqrt(4 e^{alpha tau}) e^{-alpha t / 2} on the first
    moment (Cauchy-Schwarz on the second-moment decay); item 1 compares the
    Pinsker bound of the simulated KL with the closed constant bound.
    """
    results = []
    for xi, eta in pairs:
        gap = sup_distance(xi, eta)
        if gap == 0:
            raise DegenerateFitError("pair with xi == eta")
        lam0 = lam if lam is not None else select_lambda(model, xi, eta, alpha, cfg, lambda_max, times,
                                                         n_paths)
        stats = _coupled_stats(model, xi, eta, lam0, cfg, times, n_paths)
        fit = _fit_from_stats(stats, model, xi, eta, lam0, alpha, None)
        kl = _kl_report(stats.kl, lam0, model.K, alpha, model.tau, gap, float(stats.times[-1]))
        r = math.sqrt(4 * math.exp(alpha * model.tau)) * np.exp(-alpha * stats.times / 2)
        ma, sea = np.asarray(fit.mean_abs), np.asarray(fit.mean_abs_stderr)
        ok1 = bool(np.all(ma <= r * gap + 4 * sea))
        # delta method: se(sqrt(KL / 2)) = se(KL) / (4 tv)
        tv_se = kl.kl_stderr / (4 * kl.tv_bound) if kl.tv_bound > 0 else 0.0
        ok_tv = bool(math.isfinite(kl.closed_bound) and kl.tv_bound <= kl.closed_bound + 4 * tv_se)
        results.append(C1PairResult(gap, lam0, fit, kl, r.tolist(), ok1, ok_tv))
    return C1Report(alpha, results, all(p.passed for p in results))
