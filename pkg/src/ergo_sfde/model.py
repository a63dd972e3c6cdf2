"""Coefficient tuples for delay jump-diffusions and assumption probes.

Coefficients are functionals of the path segment that read it through its
present value phi(0) and its delayed value phi(-tau).  They are vectorised
over a leading batch axis: ``drift(x0, xd)`` maps two ``(P, n)`` arrays to a
``(P, n)`` array, ``diffusion`` to ``(P, n, m)`` and ``jump_coeff`` to
``(P,)`` (the jump coefficient is scalar and multiplies the vector ``c(z)``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidModelError, SamplingError
from .segment import Segment

MC_MOMENT_SAMPLES = 100_000
SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class MarkLaw:
    """Law of the jump mark z, i.e. nu / nu(Z)."""

    kind: str = "atom"
    params: tuple = (1.0,)

    def __post_init__(self):
        if self.kind == "atom" and len(self.params) == 1:
            return
        if self.kind == "normal" and len(self.params) == 2 and self.params[1] >= 0:
            return
        raise InvalidModelError(f"bad mark law {self.kind} {self.params}")

    @classmethod
    def parse(cls, text):
        parts = str(text).split()
        if not parts:
            raise InvalidModelError("empty mark descriptor")
        return cls(parts[0], tuple(float(p) for p in parts[1:]))

    def sample(self, rng, size):
        if self.kind == "atom":
            return np.full((size, 1), self.params[0])
        return self.params[0] + self.params[1] * rng.standard_normal((size, 1))

    def moments(self):
        """E z and E z^2."""
        if self.kind == "atom":
            return self.params[0], self.params[0] ** 2
        mu, sd = self.params
        return mu, mu * mu + sd * sd

    def __str__(self):
        return " ".join([self.kind] + [repr(float(p)) for p in self.params])


@dataclass(frozen=True)
class ModelSpec:
    n: int
    m: int
    tau: float
    drift: Callable
    diffusion: Callable
    jump_coeff: Callable
    jump_rate: float
    mark_sampler: Callable
    jump_map: Callable
    K: float
    c_moment1: np.ndarray | None = None
    c_moment2: float | None = None
    name: str = "custom"
    # (a, g1, sigma0, gamma0, sat_gamma) for the scalar built-in family; enables the compiled kernel
    kernel_params: tuple | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidModelError("tau must be positive")
        if not (0 <= self.jump_rate < np.inf):
            raise InvalidModelError("jump rate must be finite and nonnegative")
        if self.c_moment1 is None or self.c_moment2 is None:
            m1, m2, se2 = self._mc_moments()
            object.__setattr__(self, "c_moment1", m1)
            object.__setattr__(self, "c_moment2", m2)
            if m2 > self.K + 3 * se2:
                raise InvalidModelError(f"int |c|^2 dnu = {m2:.4g} exceeds K = {self.K}")
        else:
            object.__setattr__(self, "c_moment1", np.asarray(self.c_moment1, dtype=float).reshape(self.n))
            if self.c_moment2 > self.K * (1 + 1e-12):
                raise InvalidModelError(f"int |c|^2 dnu = {self.c_moment2} exceeds K = {self.K}")

    def _mc_moments(self, n_samples=MC_MOMENT_SAMPLES, seed=0):
        rng = np.random.default_rng(seed)
        c = np.asarray(self.jump_map(self.mark_sampler(rng, n_samples)), dtype=float).reshape(n_samples, self.n)
        sq = np.sum(c * c, axis=1)
        r = self.jump_rate
        return r * c.mean(axis=0), r * float(sq.mean()), r * float(sq.std(ddof=1) / np.sqrt(n_samples))

    # segment-level evaluation
    def _ends(self, seg: Segment, left=False):
        s = seg.left_limit_segment() if left else seg
        return s.value_at(0.0)[None, :], s.value_at(-self.tau)[None, :]

    def b(self, seg):
        return self.drift(*self._ends(seg))[0]

    def sigma(self, seg):
        return self.diffusion(*self._ends(seg))[0]

    def gamma(self, seg, left=False):
        return float(self.jump_coeff(*self._ends(seg, left))[0])

    def with_params(self, **changes):
        q = {**self.params, **changes}
        return make_builtin(self.name, q, unchecked=q["a"] <= 0 or q["sigma0"] <= 0)


def sat(x):
    return np.tanh(x)


BUILTIN_KINDS = ("ou_jump", "linear_delay")
DEFAULT_PARAMS = dict(a=1.0, g1=0.0, sigma0=1.0, gamma0=1.0, c_scale=0.5,
                      jump_rate=1.0, mark="atom 1", tau=1.0)


def make_builtin(kind: str, p: dict | None = None, unchecked: bool = False) -> ModelSpec:
    """Scalar built-in models.

    ``ou_jump``: b = -a phi(0), sigma = sigma0, gamma = gamma0, c(z) = c_scale z.
    ``linear_delay``: b = -a phi(0) + g1 tanh(phi(-tau)), gamma = gamma0 tanh(phi(0)).

    ``unchecked`` admits a <= 0 and sigma0 = 0 (negative controls and
    deterministic oracle cases); such models violate the standing assumptions.
    """
    if kind not in BUILTIN_KINDS:
        raise InvalidModelError(f"unknown model kind {kind!r}")
    q = {**DEFAULT_PARAMS, **(p or {})}
    a, g1, s0, g0 = float(q["a"]), float(q["g1"]), float(q["sigma0"]), float(q["gamma0"])
    c_scale, rate, tau = float(q["c_scale"]), float(q["jump_rate"]), float(q["tau"])
    mark = q["mark"] if isinstance(q["mark"], MarkLaw) else MarkLaw.parse(q["mark"])
    if a <= 0 and not unchecked:
        raise InvalidModelError(f"mean-reversion rate a must be positive, got {a}")
    if s0 < 0 or (s0 == 0 and not unchecked):
        raise InvalidModelError(f"sigma0 must be positive, got {s0}")
    if kind == "ou_jump":
        g1 = 0.0
    sat_gamma = kind == "linear_delay"

    def drift(x0, xd):
        return -a * x0 + g1 * np.tanh(xd)

    def diffusion(x0, xd):
        return np.full((x0.shape[0], 1, 1), s0)

    if sat_gamma:
        def jump_coeff(x0, xd):
            return g0 * np.tanh(x0[:, 0])
    else:
        def jump_coeff(x0, xd):
            return np.full(x0.shape[0], g0)

    def jump_map(z):
        return c_scale * np.asarray(z, dtype=float).reshape(-1, 1)

    ez, ez2 = mark.moments()
    m1 = np.array([rate * c_scale * ez])
    m2 = rate * c_scale * c_scale * ez2
    K = builtin_constant(kind, a, g1, s0, g0, m2)
    params = dict(q, a=a, g1=g1, sigma0=s0, gamma0=g0, c_scale=c_scale, jump_rate=rate,
                  mark=str(mark), tau=tau)
    return ModelSpec(n=1, m=1, tau=tau, drift=drift, diffusion=diffusion, jump_coeff=jump_coeff,
                     jump_rate=rate, mark_sampler=mark.sample, jump_map=jump_map, K=K,
                     c_moment1=m1, c_moment2=m2, name=kind,
                     kernel_params=(a, g1, s0, g0, 1.0 if sat_gamma else 0.0), params=params)


def a1_constant(kind, a, g1, gamma0):
    """Analytic bound on the one-sided Lipschitz ratio for the built-ins.

    The drift term is 2<x-y, -a(x-y) + g1(tanh xd - tanh yd)>_+ <= 2|g1| (tanh is
    1-Lipschitz), the constant diffusion contributes 0, and the jump term is
    gamma0^2 for the saturated coefficient, 0 for a constant one.  A
    non-positive a adds 2|a|.
    """
    k = 2 * abs(g1) + 2 * max(-a, 0.0)
    if kind == "linear_delay":
        k += gamma0 ** 2
    return k


def builtin_constant(kind, a, g1, sigma0, gamma0, c_moment2):
    a3 = sigma0 + 1.0 / sigma0 if sigma0 > 0 else np.inf
    return max(a1_constant(kind, a, g1, gamma0), c_moment2, a3)


# assumption probes

@dataclass
class SegmentBatch:
    """Paired segments on one shared grid, as dense arrays of shape (P, k, n)."""

    tau: float
    grid: np.ndarray
    phi: np.ndarray
    psi: np.ndarray


def mixed_segment_sampler(tau, n=1, n_points=51, scale=2.0):
    """Random segment pairs: rough Brownian-like paths, sinusoids and steps, mixed."""
    grid = np.linspace(-tau, 0.0, n_points)

    def one_family(rng, size):
        kind = rng.integers(0, 3, size)
        out = np.empty((size, n_points, n))
        dt = np.diff(grid)
        # rough
        inc = rng.standard_normal((size, n_points - 1, n)) * np.sqrt(dt)[None, :, None]
        rough = scale * rng.standard_normal((size, 1, n)) + np.concatenate(
            [np.zeros((size, 1, n)), np.cumsum(inc, axis=1)], axis=1)
        # smooth
        amp = scale * rng.standard_normal((size, 1, n))
        freq = rng.uniform(0.5, 4.0, (size, 1, n))
        phase = rng.uniform(0, 2 * np.pi, (size, 1, n))
        smooth = amp * np.sin(2 * np.pi * freq * grid[None, :, None] / tau + phase)
        # steps
        loc = rng.uniform(-tau, 0.0, (size, 1, 1))
        lo, hi = scale * rng.standard_normal((2, size, 1, n))
        steps = np.where(grid[None, :, None] >= loc, hi, lo)
        out[kind == 0] = rough[kind == 0]
        out[kind == 1] = smooth[kind == 1]
        out[kind == 2] = steps[kind == 2]
        return out

    def sampler(rng, size):
        phi = one_family(rng, size)
        psi = np.where(rng.random((size, 1, 1)) < 0.3,
                       phi + 0.1 * scale * rng.standard_normal((size, n_points, n)),
                       one_family(rng, size))
        return SegmentBatch(tau, grid, phi, psi)

    return sampler


@dataclass
class A1Report:
    k_hat: float
    K: float
    passed: bool
    trials: int
    worst_index: int


@dataclass
class A3Report:
    max_value: float
    K: float
    passed: bool
    trials: int
    n_singular: int
    min_singular_value: float


def _batch_ends(seg_values):
    # no jumps at the endpoints of sampled segments: left limits equal values there
    return seg_values[:, -1, :], seg_values[:, 0, :]


def check_assumption_a1(model: ModelSpec, sampler, trials: int, seed: int = 0) -> A1Report:
    """Largest observed ratio of the one-sided Lipschitz expression to ||phi - psi||^2."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    batch = sampler(rng, trials)
    phi, psi = batch.phi, batch.psi
    dist2 = np.max(np.sum((phi - psi) ** 2, axis=2), axis=1)
    ok = dist2 > 0
    if not np.any(ok):
        raise SamplingError("sampler produced only identical pairs")
    x0, xd = _batch_ends(phi)
    y0, yd = _batch_ends(psi)
    inner = np.sum((x0 - y0) * (model.drift(x0, xd) - model.drift(y0, yd)), axis=1)
    hs = np.sum((model.diffusion(x0, xd) - model.diffusion(y0, yd)) ** 2, axis=(1, 2))
    jg = (model.jump_coeff(x0, xd) - model.jump_coeff(y0, yd)) ** 2
    lhs = 2 * np.maximum(inner, 0.0) + hs + jg
    ratio = np.where(ok, lhs / np.where(ok, dist2, 1.0), 0.0)
    worst = int(np.argmax(ratio))
    k_hat = float(ratio[worst])
    return A1Report(k_hat, model.K, k_hat <= model.K * (1 + 1e-12), trials, worst)


def check_assumption_a3(model: ModelSpec, sampler, trials: int, seed: int = 0) -> A3Report:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    batch = sampler(rng, trials)
    x0, xd = _batch_ends(batch.phi)
    sig = model.diffusion(x0, xd)
    sv = np.linalg.svd(sig, compute_uv=False)
    smin = sv.min(axis=1)
    good = smin > SINGULAR_TOL
    hs = np.sqrt(np.sum(sv ** 2, axis=1))
    inv_hs = np.full(trials, np.inf)
    inv_hs[good] = np.sqrt(np.sum(1.0 / sv[good] ** 2, axis=1))
    value = hs + inv_hs
    n_sing = int(np.count_nonzero(~good))
    vmax = float(np.max(value))
    return A3Report(vmax, model.K, n_sing == 0 and vmax <= model.K * (1 + 1e-12), trials, n_sing,
                    float(smin.min()))
