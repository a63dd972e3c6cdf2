"""Path simulation for delay jump-diffusions.

Paths are integrated with Euler-Maruyama on the union of the uniform dt grid
and the exact jump times.  A step that contains jumps is split at each jump;
the Brownian increment of the step is divided with a Brownian bridge, so the
grid increments are the same whether or not jumps are present.  The
compensator of the Poisson measure enters as the explicit drift
-gamma(X_t) * int c dnu.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import InvalidParameterError
from .kernels import euler_pair
from .segment import TOL, Segment, _fmt

DEFAULT_CHUNK = 2048


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    master_seed: int = 0
    path_index: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError("dt must be positive")
        if not self.horizon >= 0:
            raise InvalidParameterError("horizon must be nonnegative")
        if self.path_index < 0:
            raise InvalidParameterError("path_index must be nonnegative")

    def grid(self, tau):
        """(L, N): steps per delay window and number of steps to the horizon."""
        if self.dt > tau + TOL:
            raise InvalidParameterError(f"dt={self.dt} exceeds tau={tau}")
        L = int(round(tau / self.dt))
        if abs(L * self.dt - tau) > 1e-12 * max(1.0, tau) + 1e-12:
            raise InvalidParameterError(f"dt={self.dt} does not divide tau={tau}")
        N = int(round(self.horizon / self.dt))
        if abs(N * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise InvalidParameterError(f"dt={self.dt} does not divide horizon={self.horizon}")
        return L, N

    def replace(self, **kw):
        return SimConfig(**{**self.__dict__, **kw})


@dataclass(frozen=True)
class JumpStream:
    times: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return self.times.size


@dataclass
class Trajectory:
    tau: float
    times: np.ndarray
    states: np.ndarray
    pre_index: np.ndarray
    pre_states: np.ndarray
    event_times: np.ndarray
    event_marks: np.ndarray
    noise_log: dict | None = None

    @property
    def events(self):
        """(time, mark, pre-jump state) triples."""
        out = []
        for t, z in zip(self.event_times, self.event_marks):
            i = int(np.searchsorted(self.times, t - TOL))
            k = int(np.searchsorted(self.pre_index, i))
            out.append((float(t), z, self.pre_states[k]))
        return out

    def value_at(self, t):
        i = int(np.searchsorted(self.times, t + TOL, side="right")) - 1
        return self.states[max(i, 0)]

    def to_csv(self):
        lines = ["t," + ",".join(f"x_{k + 1}" for k in range(self.states.shape[1])) + ",is_jump,mark"]
        marks = {}
        for t, z in zip(self.event_times, self.event_marks):
            marks[int(np.searchsorted(self.times, t - TOL))] = z
        for i, (t, x) in enumerate(zip(self.times, self.states)):
            if i in marks:
                tail = "1," + _fmt(np.ravel(marks[i])[0])
            else:
                tail = "0,"
            lines.append(",".join([_fmt(t)] + [_fmt(v) for v in x]) + "," + tail)
        return "\n".join(lines) + "\n"


def sample_jump_stream(rate, horizon, rng, mark_sampler=None, mark_rng=None):
    """Homogeneous Poisson jump times on (0, horizon] with i.i.d. marks."""
    if rate < 0 or horizon < 0:
        raise InvalidParameterError("rate and horizon must be nonnegative")
    times = _rng.poisson_times(rng, rate, horizon)
    if mark_sampler is None:
        marks = np.zeros((times.size, 1))
    else:
        marks = np.asarray(mark_sampler(rng if mark_rng is None else mark_rng, times.size), dtype=float)
        marks = marks.reshape(times.size, marks.shape[-1] if marks.ndim == 2 else 1)
    return JumpStream(times, marks)


def path_jump_stream(model, master_seed, path_index, horizon):
    return sample_jump_stream(model.jump_rate, horizon,
                              _rng.stream(master_seed, path_index, "jumptimes"),
                              model.mark_sampler, _rng.stream(master_seed, path_index, "marks"))


def initial_history(seg: Segment, L, dt):
    if seg is None:
        return None
    return seg.value_at(-seg.tau + dt * np.arange(L + 1))


# ---------------------------------------------------------------------------
# batch engine

@dataclass
class BatchChunk:
    """Simulated paths ``paths`` on the dt grid; grid index L is time 0."""

    tau: float
    dt: float
    L: int
    N: int
    paths: np.ndarray
    X: np.ndarray
    Y: np.ndarray | None
    off: np.ndarray
    jt: np.ndarray
    marks: np.ndarray
    Xpre: np.ndarray
    Xpost: np.ndarray
    Ypre: np.ndarray
    Ypost: np.ndarray
    kl: np.ndarray
    logw: np.ndarray
    normals: np.ndarray | None = None

    @property
    def size(self):
        return self.paths.size

    def index(self, t):
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)) or k < -self.L or k > self.N:
            raise InvalidParameterError(f"t={t} is not a simulated grid time")
        return self.L + k

    def values_at(self, t, which="x"):
        g = self.index(t)
        return (self.X if which == "x" else self.Y)[:, g]

    def _series(self, which):
        if which == "x":
            return self.X, self.Xpre, self.Xpost
        if which == "y":
            return self.Y, self.Ypre, self.Ypost
        return self.X - self.Y, self.Xpre - self.Ypre, self.Xpost - self.Ypost

    def window_sup(self, t, which="x"):
        """Per-path ||Z_t||_inf over [t - tau, t] for Z in {x, y, diff}; jump points included."""
        path, pre, post = self._series(which)
        g = self.index(t)
        if g - self.L < 0:
            raise InvalidParameterError("window starts before the initial segment")
        out = np.max(np.linalg.norm(path[:, g - self.L:g + 1], axis=2), axis=1)
        if self.jt.size:
            owner = np.repeat(np.arange(self.size), np.diff(self.off))
            inside = (self.jt > t - self.tau + TOL) & (self.jt <= t + TOL)
            if np.any(inside):
                v = np.maximum(np.linalg.norm(pre[inside], axis=1), np.linalg.norm(post[inside], axis=1))
                np.maximum.at(out, owner[inside], v)
        return out

    def window_sup_range(self, t0, t1, which="x"):
        """Per-path sup of |Z(s)| for s in [t0, t1] (grid and jump points)."""
        path, pre, post = self._series(which)
        g0, g1 = self.index(t0), self.index(t1)
        out = np.max(np.linalg.norm(path[:, g0:g1 + 1], axis=2), axis=1)
        if self.jt.size:
            owner = np.repeat(np.arange(self.size), np.diff(self.off))
            inside = (self.jt > t0 + TOL) & (self.jt <= t1 + TOL)
            if np.any(inside):
                v = np.maximum(np.linalg.norm(pre[inside], axis=1), np.linalg.norm(post[inside], axis=1))
                np.maximum.at(out, owner[inside], v)
        return out

    def jump_counts(self, t=None):
        if t is None:
            return np.diff(self.off)
        owner = np.repeat(np.arange(self.size), np.diff(self.off))
        return np.bincount(owner[self.jt <= t + TOL], minlength=self.size)

    def kl_integral(self, t0=0.0, t1=None):
        """Per-path int_{t0}^{t1} |theta_0(s)|^2 ds (without the factor 1/2)."""
        k0 = int(round(t0 / self.dt))
        k1 = self.N if t1 is None else int(round(t1 / self.dt))
        return self.kl[:, k0:k1].sum(axis=1)

    def scalar_jumps(self, which="x"):
        _, pre, post = self._series(which)
        return self.off, self.jt, pre[:, 0], post[:, 0]

    def trajectory(self, i, which="x", initial: Segment | None = None):
        path, pre, post = self._series(which)
        L, dt = self.L, self.dt
        grid_t = dt * np.arange(1, self.N + 1)
        grid_v = path[i, L + 1:]
        sl = slice(self.off[i], self.off[i + 1])
        jt = self.jt[sl]
        order = np.argsort(np.concatenate([grid_t, jt]), kind="stable")
        is_jump = np.concatenate([np.zeros(grid_t.size, bool), np.ones(jt.size, bool)])[order]
        times = np.concatenate([grid_t, jt])[order]
        states = np.concatenate([grid_v, post[sl]])[order]
        if initial is None:
            initial = Segment(self.tau, dt * np.arange(-L, 1), path[i, :L + 1])
        t0, s0 = initial.grid.copy(), initial.values
        all_t = np.concatenate([t0, times])
        all_s = np.concatenate([s0, states])
        pre_index = np.concatenate([initial.pre_index, t0.size + np.nonzero(is_jump)[0]])
        pre_states = np.concatenate([initial.pre_values, pre[sl]])
        noise = None if self.normals is None else {"brownian": self.normals[i]}
        return Trajectory(self.tau, all_t, all_s, pre_index.astype(np.int64), pre_states,
                          jt.copy(), self.marks[sl].copy(), noise)


def _workers():
    try:
        return max(1, int(os.environ.get("ERGO_SFDE_WORKERS", "1")))
    except ValueError:
        return 1


def _simulate_chunk(model, hx, hy, cfg, paths, lam, aux, keep_noise):
    L, N = cfg.grid(model.tau)
    P, n, m = paths.size, model.n, model.m
    dt = cfg.dt
    Z = np.empty((P, N, m))
    times, marks, bridges, counts = [], [], [], np.zeros(P, dtype=np.int64)
    for r, p in enumerate(paths):
        Z[r] = _rng.brownian_normals(cfg.master_seed, int(p), N, m)
        if aux or model.jump_rate == 0:
            continue
        js = path_jump_stream(model, cfg.master_seed, int(p), N * dt)
        counts[r] = js.times.size
        times.append(js.times)
        marks.append(js.marks)
        bridges.append(_rng.stream(cfg.master_seed, int(p), "bridge").standard_normal((js.times.size, m)))
    off = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    if off[-1]:
        jt = np.concatenate(times)
        mk = np.concatenate(marks)
        B = np.concatenate(bridges)
        jc = np.asarray(model.jump_map(mk), dtype=float).reshape(-1, n)
    else:
        jt, mk, B, jc = np.zeros(0), np.zeros((0, 1)), np.zeros((0, m)), np.zeros((0, n))
    X = np.empty((P, L + N + 1, n))
    X[:, :L + 1] = hx
    coupled = hy is not None
    Y = None
    if coupled:
        Y = np.empty((P, L + N + 1, n))
        Y[:, :L + 1] = hy
    Xpre, Xpost, Ypre, Ypost, kl, logw = euler_pair(model, X, Y, L, dt, Z, off, jt, jc, B,
                                                    lam=lam, coupled=coupled)
    return BatchChunk(model.tau, dt, L, N, paths, X, Y, off, jt, mk, Xpre, Xpost, Ypre, Ypost,
                      kl, logw, Z if keep_noise else None)


def iter_batch(model, xi: Segment, cfg: SimConfig, n_paths: int, eta: Segment | None = None,
               lam: float = 0.0, aux: bool = False, path_offset: int = 0,
               chunk_size: int = DEFAULT_CHUNK, keep_noise: bool = False):
    """Yield :class:`BatchChunk` objects covering paths ``path_offset .. path_offset + n_paths - 1``.

    Chunks are always cut at multiples of ``chunk_size`` in path index and
    yielded in ascending order, whatever ``ERGO_SFDE_WORKERS`` is.
    """
    _check_segment(model, xi)
    if eta is not None:
        _check_segment(model, eta)
    L, _ = cfg.grid(model.tau)
    hx = initial_history(xi, L, cfg.dt)
    hy = initial_history(eta, L, cfg.dt)
    lo, hi = path_offset, path_offset + n_paths
    bounds = []
    s = lo
    while s < hi:
        e = min(hi, (s // chunk_size + 1) * chunk_size)
        bounds.append((s, e))
        s = e

    def work(b):
        return _simulate_chunk(model, hx, hy, cfg, np.arange(b[0], b[1]), lam, aux, keep_noise)

    workers = _workers()
    if workers == 1 or len(bounds) == 1:
        for b in bounds:
            yield work(b)
    else:
        with ThreadPoolExecutor(workers) as ex:
            yield from ex.map(work, bounds)


def simulate_batch(model, xi, cfg, n_paths, **kw):
    """All chunks of :func:`iter_batch` merged into one (small batches only)."""
    chunks = list(iter_batch(model, xi, cfg, n_paths, **kw))
    return merge_chunks(chunks)


def merge_chunks(chunks):
    if len(chunks) == 1:
        return chunks[0]
    c0 = chunks[0]
    offs, base = [np.zeros(1, dtype=np.int64)], 0
    for c in chunks:
        offs.append(c.off[1:] + base)
        base += c.off[-1]
    cat = lambda name: np.concatenate([getattr(c, name) for c in chunks])
    return BatchChunk(c0.tau, c0.dt, c0.L, c0.N, cat("paths"), cat("X"),
                      None if c0.Y is None else cat("Y"), np.concatenate(offs), cat("jt"), cat("marks"),
                      cat("Xpre"), cat("Xpost"), cat("Ypre"), cat("Ypost"), cat("kl"), cat("logw"),
                      None if c0.normals is None else cat("normals"))


def _check_segment(model, seg):
    if abs(seg.tau - model.tau) > TOL:
        raise InvalidParameterError(f"segment tau {seg.tau} != model tau {model.tau}")
    if seg.dim != model.n:
        raise InvalidParameterError(f"segment dimension {seg.dim} != model dimension {model.n}")


def simulate(model, xi: Segment, cfg: SimConfig, keep_noise=False) -> Trajectory:
    """One path of the delay jump-diffusion started from the segment ``xi``."""
    _check_segment(model, xi)
    L, _ = cfg.grid(model.tau)
    ch = _simulate_chunk(model, initial_history(xi, L, cfg.dt), None, cfg,
                         np.array([cfg.path_index]), 0.0, False, keep_noise)
    return ch.trajectory(0, initial=xi)


def simulate_auxiliary(model, xi: Segment, cfg: SimConfig, keep_noise=False) -> Trajectory:
    """The jump-free process: same Brownian stream, compensator drift kept."""
    _check_segment(model, xi)
    L, _ = cfg.grid(model.tau)
    ch = _simulate_chunk(model, initial_history(xi, L, cfg.dt), None, cfg,
                         np.array([cfg.path_index]), 0.0, True, keep_noise)
    return ch.trajectory(0, initial=xi)


# ---------------------------------------------------------------------------
# linear jump Ornstein-Uhlenbeck testbed

@dataclass(frozen=True)
class HKernel:
    """Deterministic integrand h(t, z): ``constant`` (h = value) or ``identity`` (h = z)."""

    kind: str = "identity"
    value: float = 1.0

    def __call__(self, t, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        if self.kind == "constant":
            return np.full(z.shape, self.value)
        if self.kind == "identity":
            return z
        raise InvalidParameterError(f"unknown kernel {self.kind!r}")

    def compensator_rate(self, rate, mark_law):
        """int_Z h(t, z) nu(dz) (time independent for the built-ins)."""
        if self.kind == "constant":
            return rate * self.value
        return rate * mark_law.moments()[0]


def _linear_ou_path(lam, h_spec, rate, mark_law, horizon, dt, master_seed, path_index):
    js = sample_jump_stream(rate, horizon, _rng.stream(master_seed, path_index, "jumptimes"),
                            mark_law.sample, _rng.stream(master_seed, path_index, "marks"))
    H = h_spec.compensator_rate(rate, mark_law)
    hv = h_spec(js.times, js.marks)
    grid = dt * np.arange(int(round(horizon / dt)) + 1)
    # Y(t) = sum_i e^{-lam (t - s_i)} h_i - H (1 - e^{-lam t}) / lam
    comp = lambda t: -H * (1.0 - np.exp(-lam * t)) / lam

    def y_at(t, include_equal=True):
        t = np.atleast_1d(t)
        mask = (js.times[None, :] <= t[:, None]) if include_equal else (js.times[None, :] < t[:, None])
        decay = np.exp(-lam * np.clip(t[:, None] - js.times[None, :], 0.0, None))
        return np.sum(np.where(mask, decay * hv[None, :], 0.0), axis=1) + comp(t)

    y_grid = y_at(grid)
    y_pre = y_at(js.times, include_equal=False)
    y_post = y_pre + hv
    return js, grid, y_grid, y_pre, y_post


def simulate_linear_jump_ou(lam, h_spec: HKernel, cfg: SimConfig, rate=1.0, mark="atom 1") -> Trajectory:
    """dY = -lam Y dt + int h(t, z) N~(dt, dz), Y(0) = 0, via its explicit solution.

    Exact at grid and jump times.  Between events Y relaxes monotonically
    towards -H/lam, so the sup of |Y| over the stored points is the sup over
    the whole path.
    """
    from .model import MarkLaw

    if not lam > 0:
        raise InvalidParameterError("lambda must be positive")
    mark_law = mark if isinstance(mark, MarkLaw) else MarkLaw.parse(mark)
    js, grid, yg, ypre, ypost = _linear_ou_path(lam, h_spec, rate, mark_law, cfg.horizon, cfg.dt,
                                                cfg.master_seed, cfg.path_index)
    times = np.concatenate([grid, js.times])
    states = np.concatenate([yg, ypost])
    order = np.argsort(times, kind="stable")
    is_jump = np.concatenate([np.zeros(grid.size, bool), np.ones(js.times.size, bool)])[order]
    return Trajectory(0.0, times[order], states[order][:, None], np.nonzero(is_jump)[0].astype(np.int64),
                      ypre[:, None], js.times, js.marks)


def linear_jump_ou_sup(lam, h_spec, horizon, n_paths, rate=1.0, mark="atom 1", p=2.0,
                       master_seed=0, path_offset=0):
    """Per-path sup_{t <= horizon} |Y(t)|^p for the linear jump OU (exact, event-driven)."""
    from .model import MarkLaw

    if not lam > 0:
        raise InvalidParameterError("lambda must be positive")
    mark_law = mark if isinstance(mark, MarkLaw) else MarkLaw.parse(mark)
    H = h_spec.compensator_rate(rate, mark_law)
    out = np.empty(n_paths)
    for r in range(n_paths):
        pi = path_offset + r
        js = sample_jump_stream(rate, horizon, _rng.stream(master_seed, pi, "jumptimes"),
                                mark_law.sample, _rng.stream(master_seed, pi, "marks"))
        hv = h_spec(js.times, js.marks)
        y, t, best = 0.0, 0.0, 0.0
        shift = H / lam
        for s, h in zip(js.times, hv):
            y = np.exp(-lam * (s - t)) * (y + shift) - shift
            best = max(best, abs(y))
            y += h
            best = max(best, abs(y))
            t = s
        y = np.exp(-lam * (horizon - t)) * (y + shift) - shift
        out[r] = max(best, abs(y)) ** p
    return out


def sup_moment_estimate(trajs, p, window):
    """Monte Carlo E sup_{t in window} |X(t)|^p with its standard error."""
    trajs = list(trajs)
    if not trajs:
        raise InvalidParameterError("empty batch")
    t0, t1 = window
    vals = np.empty(len(trajs))
    for k, tr in enumerate(trajs):
        if tr.times[0] > t0 + TOL or tr.times[-1] < t1 - TOL:
            raise InvalidParameterError("trajectory does not cover the window")
        sel = (tr.times >= t0 - TOL) & (tr.times <= t1 + TOL)
        m = np.max(np.linalg.norm(tr.states[sel], axis=1)) if np.any(sel) else 0.0
        m = max(m, np.linalg.norm(tr.value_at(t0)))
        jsel = sel[tr.pre_index] if tr.pre_index.size else np.zeros(0, bool)
        jsel &= tr.times[tr.pre_index] > t0 + TOL if tr.pre_index.size else jsel
        if np.any(jsel):
            m = max(m, np.max(np.linalg.norm(tr.pre_states[jsel], axis=1)))
        vals[k] = m ** p
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se
