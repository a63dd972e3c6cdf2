"""Cadlag path segments on [-tau, 0], sup norm and a Skorohod upper bound.

A :class:`Segment` stores the path at finitely many grid points.  Between
grid points the path is read with last-value (cadlag) interpolation.  Grid
points listed in ``pre_index`` carry an explicit left limit ``pre_values``
(the value just before a jump); every other grid point is a continuity point
whose left limit is the stored value itself.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidParameterError

TOL = 1e-12
K_MAX = 4
REFINE_FRACTIONS = (0.25, 0.5, 0.75)


def _as_2d(values):
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v


@dataclass(frozen=True, eq=False)
class Segment:
    tau: float
    grid: np.ndarray
    values: np.ndarray
    pre_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pre_values: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = _as_2d(self.values)
        pre_index = np.asarray(self.pre_index, dtype=np.int64).reshape(-1)
        pre_values = (np.zeros((0, values.shape[1])) if self.pre_values is None
                      else _as_2d(self.pre_values).reshape(-1, values.shape[1]))
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")
        if grid.ndim != 1 or grid.size < 2:
            raise InvalidParameterError("grid needs at least the two endpoints")
        if abs(grid[0] + self.tau) > TOL or abs(grid[-1]) > TOL:
            raise InvalidParameterError("grid must start at -tau and end at 0")
        if np.any(np.diff(grid) <= 0):
            raise InvalidParameterError("grid must be strictly increasing")
        if values.shape[0] != grid.size:
            raise InvalidParameterError("values and grid lengths differ")
        if pre_index.size != pre_values.shape[0]:
            raise InvalidParameterError("pre_index and pre_values lengths differ")
        if pre_index.size and (pre_index.min() < 1 or pre_index.max() >= grid.size
                               or np.unique(pre_index).size != pre_index.size):
            raise InvalidParameterError("pre_index entries must be distinct grid indices > 0")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(pre_values))):
            raise InvalidParameterError("segment values must be finite")
        grid = grid.copy()
        grid[0], grid[-1] = -self.tau, 0.0
        order = np.argsort(pre_index)
        for name, arr in (("grid", grid), ("values", values),
                          ("pre_index", pre_index[order]), ("pre_values", pre_values[order])):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # construction helpers
    @classmethod
    def constant(cls, tau, value, n_points=2):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        grid = np.linspace(-tau, 0.0, max(int(n_points), 2))
        return cls(tau, grid, np.tile(value, (grid.size, 1)))

    @classmethod
    def from_function(cls, tau, fn, n_points=101):
        grid = np.linspace(-tau, 0.0, n_points)
        return cls(tau, grid, _as_2d(np.array([np.atleast_1d(fn(th)) for th in grid])))

    @classmethod
    def step(cls, tau, at, before=0.0, after=1.0):
        """Scalar unit-style step: ``before`` on [-tau, at), ``after`` on [at, 0]."""
        if not -tau < at < 0:
            raise InvalidParameterError("step location must be interior")
        return cls(tau, [-tau, at, 0.0], [before, after, after], [1], [[before]])

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def has_jumps(self):
        return self.pre_index.size > 0

    def pre_value(self, i):
        """Left limit at grid index ``i``."""
        k = np.searchsorted(self.pre_index, i)
        if k < self.pre_index.size and self.pre_index[k] == i:
            return self.pre_values[k]
        return self.values[i]

    def value_at(self, theta):
        """Cadlag lookup; ``theta`` may be an array."""
        th = np.asarray(theta, dtype=float)
        idx = np.clip(np.searchsorted(self.grid, th + TOL, side="right") - 1, 0, self.grid.size - 1)
        return self.values[idx]

    def left_limit_at(self, theta):
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.empty((th.size, self.dim))
        for k, t in enumerate(th):
            i = np.searchsorted(self.grid, t + TOL, side="right") - 1
            i = max(i, 0)
            if abs(self.grid[i] - t) <= TOL:
                out[k] = self.pre_value(i)
            else:
                out[k] = self.values[i]
        return out

    def left_limit_segment(self):
        """The segment phi_- with phi_-(theta) = lim_{s up theta} phi(s)."""
        vals = self.values.copy()
        if self.has_jumps:
            vals[self.pre_index] = self.pre_values
        return Segment(self.tau, self.grid, vals)

    def compose(self, tc: "TimeChange"):
        """``self o lambda`` as a new segment (breakpoints moved by lambda^-1)."""
        if abs(tc.tau - self.tau) > TOL:
            raise DimensionError("time change and segment have different tau")
        new_grid = tc.inverse(self.grid)
        new_grid[0], new_grid[-1] = -self.tau, 0.0
        return Segment(self.tau, new_grid, self.values, self.pre_index, self.pre_values)

    def __repr__(self):
        return (f"Segment(tau={self.tau}, n_points={self.grid.size}, dim={self.dim}, "
                f"jumps={self.pre_index.size})")

    # serialization
    def to_csv(self, fh=None):
        n = self.dim
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta"] + [f"v_{k + 1}" for k in range(n)] + ["is_jump"]
                   + [f"pre_v_{k + 1}" for k in range(n)])
        jumps = dict(zip(self.pre_index.tolist(), self.pre_values))
        for i, th in enumerate(self.grid):
            row = [_fmt(th)] + [_fmt(v) for v in self.values[i]]
            if i in jumps:
                row += ["1"] + [_fmt(v) for v in jumps[i]]
            else:
                row += ["0"] + [""] * n
            w.writerow(row)
        if fh is None:
            return buf.getvalue()

    @classmethod
    def from_csv(cls, text, tau=None):
        rows = list(csv.reader(io.StringIO(text) if isinstance(text, str) else text))
        header, body = rows[0], rows[1:]
        n = sum(1 for h in header if h.startswith("v_"))
        grid = np.array([float(r[0]) for r in body])
        values = np.array([[float(x) for x in r[1:1 + n]] for r in body])
        pre_index = [i for i, r in enumerate(body) if r[1 + n] == "1"]
        pre_values = [[float(x) for x in body[i][2 + n:2 + 2 * n]] for i in pre_index]
        tau = -grid[0] if tau is None else tau
        return cls(tau, grid, values, pre_index, np.array(pre_values).reshape(-1, n))


def _fmt(x):
    return f"{float(x):.17g}"


@dataclass(frozen=True, eq=False)
class TimeChange:
    """Piecewise-linear increasing bijection of [-tau, 0] with fixed endpoints."""

    tau: float
    knots: np.ndarray
    images: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        im = np.asarray(self.images, dtype=float)
        if k.shape != im.shape or k.size < 2:
            raise InvalidParameterError("knots and images must match, with >= 2 points")
        if abs(k[0] + self.tau) > TOL or abs(k[-1]) > TOL or abs(im[0] + self.tau) > TOL or abs(im[-1]) > TOL:
            raise InvalidParameterError("time change endpoints must be pinned to -tau and 0")
        if np.any(np.diff(k) <= 0) or np.any(np.diff(im) <= 0):
            raise InvalidParameterError("time change must be strictly increasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "images", im)

    @classmethod
    def identity(cls, tau):
        return cls(tau, np.array([-tau, 0.0]), np.array([-tau, 0.0]))

    def __call__(self, theta):
        return np.interp(theta, self.knots, self.images)

    def inverse(self, theta):
        return np.interp(theta, self.images, self.knots)

    def slopes(self):
        return np.diff(self.images) / np.diff(self.knots)

    def norm(self):
        """sup over s < t of |log((lambda(t) - lambda(s)) / (t - s))|; the max log-slope for PL maps."""
        return float(np.max(np.abs(np.log(self.slopes()))))


def _check_pair(a, b):
    if abs(a.tau - b.tau) > TOL or a.dim != b.dim:
        raise DimensionError(f"segments differ in tau/dim: ({a.tau}, {a.dim}) vs ({b.tau}, {b.dim})")


def merged_grid(*grids, tol=TOL):
    g = np.sort(np.concatenate(grids))
    keep = [0]
    for i in range(1, g.size):
        if g[i] - g[keep[-1]] > tol:
            keep.append(i)
    return g[keep]


def sup_norm(s: Segment) -> float:
    m = float(np.max(np.linalg.norm(s.values, axis=1)))
    if s.has_jumps:
        m = max(m, float(np.max(np.linalg.norm(s.pre_values, axis=1))))
    return m


def _jump_thetas(s):
    return s.grid[s.pre_index] if s.has_jumps else np.zeros(0)


def sup_distance(a: Segment, b: Segment) -> float:
    """Sup norm of a - b on the merged grid, left limits included at jump points."""
    _check_pair(a, b)
    g = merged_grid(a.grid, b.grid)
    d = float(np.max(np.linalg.norm(a.value_at(g) - b.value_at(g), axis=1)))
    jt = merged_grid(_jump_thetas(a), _jump_thetas(b)) if (a.has_jumps or b.has_jumps) else np.zeros(0)
    if jt.size:
        d = max(d, float(np.max(np.linalg.norm(a.left_limit_at(jt) - b.left_limit_at(jt), axis=1))))
    return d


def _jump_locations(s, k_max):
    """Interior grid thetas of the k_max largest changes of ``s``."""
    if s.grid.size < 3:
        return np.zeros(0)
    idx = np.arange(1, s.grid.size - 1)
    mag = np.linalg.norm(s.values[idx] - s.values[idx - 1], axis=1)
    for k, i in enumerate(s.pre_index):
        if 1 <= i < s.grid.size - 1:
            mag[i - 1] = max(mag[i - 1], np.linalg.norm(s.values[i] - s.pre_values[k]))
    order = np.argsort(-mag, kind="stable")
    top = [idx[j] for j in order[:k_max] if mag[j] > TOL]
    return np.sort(s.grid[top])


def candidate_time_changes(a: Segment, b: Segment, k_max=K_MAX):
    """Time changes lambda aligning jumps of ``a`` (images) onto jumps of ``b`` (knots)."""
    tau = a.tau
    ja, jb = _jump_locations(a, k_max), _jump_locations(b, k_max)
    out = [TimeChange.identity(tau)]
    for r in range(1, min(ja.size, jb.size) + 1):
        for sa in itertools.combinations(ja, r):
            for sb in itertools.combinations(jb, r):
                knots = np.concatenate(([-tau], sb, [0.0]))
                images = np.concatenate(([-tau], sa, [0.0]))
                if np.allclose(knots, images, atol=TOL):
                    continue
                out.append(TimeChange(tau, knots, images))
                if r == 1:
                    for f in REFINE_FRACTIONS:
                        out.append(TimeChange(tau, knots, knots + f * (images - knots)))
    return out


def _skorohod_one_way(a, b, k_max):
    best = sup_distance(a, b)
    for tc in candidate_time_changes(a, b, k_max)[1:]:
        lam = tc.norm()
        if lam >= best:
            continue
        best = min(best, lam + sup_distance(a.compose(tc), b))
    return best


def skorohod_upper(a: Segment, b: Segment, k_max=K_MAX) -> float:
    """Upper bound on the Skorohod distance d(a, b).

    Minimises |||lambda||| + ||a o lambda - b|| over a finite family of
    piecewise-linear time changes that always contains the identity, so the
    result never exceeds :func:`sup_distance`.  Symmetrised over argument order.
    """
    _check_pair(a, b)
    return min(_skorohod_one_way(a, b, k_max), _skorohod_one_way(b, a, k_max))


def segment_at(traj, t: float) -> Segment:
    """The segment X_t(theta) = X(t + theta) of a simulated trajectory."""
    tau = traj.tau
    times = traj.times
    if t - tau < times[0] - TOL or t > times[-1] + TOL:
        raise InvalidParameterError(
            f"t={t} outside simulated window [{times[0] + tau}, {times[-1]}]")
    i0 = max(int(np.searchsorted(times, t - tau + TOL, side="right")) - 1, 0)
    i1 = int(np.searchsorted(times, t + TOL, side="right")) - 1
    grid = times[i0:i1 + 1] - t
    values = traj.states[i0:i1 + 1]
    grid = grid.copy()
    grid[0] = -tau
    pre_idx, pre_vals = [], []
    sel = (traj.pre_index > i0) & (traj.pre_index <= i1)
    for gi, pv in zip(traj.pre_index[sel], traj.pre_states[sel]):
        pre_idx.append(gi - i0)
        pre_vals.append(pv)
    if grid[-1] < -TOL:
        grid = np.append(grid, 0.0)
        values = np.vstack([values, values[-1:]])
    else:
        grid[-1] = 0.0
    return Segment(tau, grid, values, np.array(pre_idx, dtype=np.int64),
                   np.array(pre_vals).reshape(-1, values.shape[1]))
