"""Hot inner loops.

``euler_pair`` advances a batch of (X, Y) path pairs through the
jump-adapted Euler scheme; ``pairwise_window_sup`` fills the sup-distance
cost matrix between two ensembles of segments.  Both have a numba
implementation (scalar built-in models only, for the stepper) and a numpy
implementation that accepts arbitrary vectorised coefficients.  Dispatch is
by :func:`ergo_sfde._accel.use_numba`.
"""
import math

import numpy as np

from ._accel import njit, use_numba
from .errors import DivergenceError

JUMP_TOL = 1e-12


# ---------------------------------------------------------------------------
# Euler stepper, compiled (scalar built-in family)

@njit(nogil=True, error_model="numpy")
def _coef(x, xd, a, g1, s0, g0, satg):
    b = -a * x + g1 * math.tanh(xd)
    gam = g0 * math.tanh(x) if satg > 0.5 else g0
    return b, s0, gam


@njit(nogil=True, error_model="numpy")
def _euler_pair_nb(X, Y, L, dt, Z, off, jt, jc, B, a, g1, s0, g0, satg, cm1, lam, coupled,
                   Xpre, Xpost, Ypre, Ypost, kl, logw, bad_step):
    P = X.shape[0]
    N = Z.shape[1]
    sqdt = math.sqrt(dt)
    for p in range(P):
        ptr = off[p]
        end = off[p + 1]
        lw = 0.0
        for k in range(N):
            i = L + k
            x = X[p, i, 0]
            xd = X[p, i - L, 0]
            y = 0.0
            yd = 0.0
            if coupled:
                y = Y[p, i, 0]
                yd = Y[p, i - L, 0]
            cur = k * dt
            t_next = (k + 1) * dt
            rem_dw = sqdt * Z[p, k, 0]
            rem_t = dt
            klk = 0.0
            while True:
                last = not (ptr < end and jt[ptr] <= t_next)
                if last:
                    h = rem_t
                    dw = rem_dw
                else:
                    h = jt[ptr] - cur
                    if h < 0.0:
                        h = 0.0
                    if h > rem_t:
                        h = rem_t
                    if rem_t > 0.0:
                        var = h * (rem_t - h) / rem_t
                        if var < 0.0:
                            var = 0.0
                        dw = (h / rem_t) * rem_dw + math.sqrt(var) * B[ptr, 0]
                    else:
                        dw = 0.0
                bx, sx, gx = _coef(x, xd, a, g1, s0, g0, satg)
                xn = x + (bx - gx * cm1) * h + sx * dw
                if coupled:
                    by, sy, gy = _coef(y, yd, a, g1, s0, g0, satg)
                    th = lam * (x - y) / sy
                    yn = y + (by - gy * cm1 + lam * (x - y)) * h + sy * dw
                    _, sy_r, _ = _coef(yn, yd, a, g1, s0, g0, satg)
                    th_r = lam * (xn - yn) / sy_r
                    klk += 0.5 * (th * th + th_r * th_r) * h
                    lw += -th * dw - 0.5 * th * th * h
                    y = yn
                x = xn
                if last:
                    break
                Xpre[ptr, 0] = x
                _, _, gx = _coef(x, xd, a, g1, s0, g0, satg)
                x = x + gx * jc[ptr, 0]
                Xpost[ptr, 0] = x
                if coupled:
                    Ypre[ptr, 0] = y
                    _, _, gy = _coef(y, yd, a, g1, s0, g0, satg)
                    y = y + gy * jc[ptr, 0]
                    Ypost[ptr, 0] = y
                rem_dw -= dw
                rem_t -= h
                cur = jt[ptr]
                ptr += 1
            X[p, i + 1, 0] = x
            if coupled:
                Y[p, i + 1, 0] = y
                kl[p, k] = klk
            if not (math.isfinite(x) and math.isfinite(y)):
                bad_step[p] = k
                break
        logw[p] = lw


# ---------------------------------------------------------------------------
# Euler stepper, numpy (any vectorised model)

def _theta(model, lam, x, y, y0, yd):
    sig = model.diffusion(y0, yd)
    rhs = lam * (x - y)
    if sig.shape[1] == 1 and sig.shape[2] == 1:
        return rhs / sig[:, 0, :]
    return np.linalg.solve(sig, rhs[..., None])[..., 0]


def _substep(model, cm1, lam, x, xd, y, yd, h, dw, coupled):
    """One Euler sub-step on the selected rows; returns new x, y and theta terms."""
    bx = model.drift(x, xd) - model.jump_coeff(x, xd)[:, None] * cm1[None, :]
    xn = x + bx * h[:, None] + np.einsum("pij,pj->pi", model.diffusion(x, xd), dw)
    if not coupled:
        return xn, None, None, None
    th = _theta(model, lam, x, y, y, yd)
    by = model.drift(y, yd) - model.jump_coeff(y, yd)[:, None] * cm1[None, :] + lam * (x - y)
    yn = y + by * h[:, None] + np.einsum("pij,pj->pi", model.diffusion(y, yd), dw)
    th_r = _theta(model, lam, xn, yn, yn, yd)
    return xn, yn, th, th_r


def _euler_pair_np(model, X, Y, L, dt, Z, off, jt, jc, B, lam, coupled,
                   Xpre, Xpost, Ypre, Ypost, kl, logw):
    P, N, m = Z.shape
    cm1 = np.asarray(model.c_moment1, dtype=float)
    ptr = off[:-1].copy()
    end = off[1:]
    jt_ext = np.append(jt, np.inf)
    sqdt = math.sqrt(dt)
    for k in range(N):
        i = L + k
        x = X[:, i].copy()
        xd = X[:, i - L]
        y = Y[:, i].copy() if coupled else None
        yd = Y[:, i - L] if coupled else None
        cur = np.full(P, k * dt)
        t_next = (k + 1) * dt
        rem_dw = sqdt * Z[:, k]
        rem_t = np.full(P, dt)
        klk = np.zeros(P)
        while True:
            nxt = np.where(ptr < end, jt_ext[np.minimum(ptr, jt.size)], np.inf)
            rows = np.nonzero(nxt <= t_next)[0]
            if rows.size == 0:
                break
            j = ptr[rows]
            h = np.clip(jt[j] - cur[rows], 0.0, rem_t[rows])
            rt = rem_t[rows]
            safe = np.where(rt > 0, rt, 1.0)
            var = np.maximum(h * (rt - h) / safe, 0.0)
            dw = np.where((rt > 0)[:, None],
                          (h / safe)[:, None] * rem_dw[rows] + np.sqrt(var)[:, None] * B[j], 0.0)
            xs, xds = x[rows], xd[rows]
            ys, yds = (y[rows], yd[rows]) if coupled else (None, None)
            xn, yn, th, th_r = _substep(model, cm1, lam, xs, xds, ys, yds, h, dw, coupled)
            Xpre[j] = xn
            xj = xn + model.jump_coeff(xn, xds)[:, None] * jc[j]
            Xpost[j] = xj
            x[rows] = xj
            if coupled:
                klk[rows] += 0.5 * (np.sum(th * th, 1) + np.sum(th_r * th_r, 1)) * h
                logw[rows] += -np.sum(th * dw, 1) - 0.5 * np.sum(th * th, 1) * h
                Ypre[j] = yn
                yj = yn + model.jump_coeff(yn, yds)[:, None] * jc[j]
                Ypost[j] = yj
                y[rows] = yj
            rem_dw[rows] -= dw
            rem_t[rows] -= h
            cur[rows] = jt[j]
            ptr[rows] += 1
        xn, yn, th, th_r = _substep(model, cm1, lam, x, xd, y, yd, rem_t, rem_dw, coupled)
        X[:, i + 1] = xn
        if coupled:
            klk += 0.5 * (np.sum(th * th, 1) + np.sum(th_r * th_r, 1)) * rem_t
            logw += -np.sum(th * rem_dw, 1) - 0.5 * np.sum(th * th, 1) * rem_t
            Y[:, i + 1] = yn
            kl[:, k] = klk
        if not (np.all(np.isfinite(xn)) and (not coupled or np.all(np.isfinite(yn)))):
            raise DivergenceError(f"non-finite state at t={(k + 1) * dt:.6g}", time=(k + 1) * dt)


def euler_pair(model, X, Y, L, dt, Z, off, jt, jc, B, lam=0.0, coupled=False):
    """Advance X (and Y when ``coupled``) in place over ``Z.shape[1]`` steps.

    X, Y: (P, L + N + 1, n) with the first L + 1 rows holding the initial
    segments.  Jumps are given in CSR form: path p owns jumps
    ``off[p]:off[p+1]`` with absolute times ``jt``, jump vectors ``jc`` = c(z)
    and bridge normals ``B``.  Returns pre/post jump states, per-step KL
    increments int |theta|^2 ds (trapezoidal) and Girsanov log-weights.
    """
    P, N, m = Z.shape
    n = X.shape[2]
    J = jt.size
    Xpre, Xpost = np.zeros((J, n)), np.zeros((J, n))
    Ypre, Ypost = np.zeros((J, n)), np.zeros((J, n))
    kl = np.zeros((P, N))
    logw = np.zeros(P)
    if Y is None:
        Y = np.zeros((P, 1, n))
    if use_numba() and model.kernel_params is not None:
        a, g1, s0, g0, satg = model.kernel_params
        bad = np.full(P, -1, dtype=np.int64)
        _euler_pair_nb(X, Y, L, dt, Z, off, jt, jc, B, a, g1, s0, g0, satg,
                       float(model.c_moment1[0]), float(lam), bool(coupled),
                       Xpre, Xpost, Ypre, Ypost, kl, logw, bad)
        if np.any(bad >= 0):
            k = int(bad[bad >= 0].min())
            raise DivergenceError(f"non-finite state at t={(k + 1) * dt:.6g}", time=(k + 1) * dt)
    else:
        _euler_pair_np(model, X, Y, L, dt, Z, off, jt, jc, B, float(lam), bool(coupled),
                       Xpre, Xpost, Ypre, Ypost, kl, logw)
    return Xpre, Xpost, Ypre, Ypost, kl, logw


# ---------------------------------------------------------------------------
# pairwise sup distance between windowed segments

@njit(nogil=True)
def _lookup(path, jt_p, post_p, pre_p, g0, dt, s, left):
    """Value (or left limit) at time s of a grid path with jumps; g0 = grid index of time 0."""
    g = int(math.floor(s / dt + 1e-9))
    v = path[g0 + g]
    best_t = g * dt
    for q in range(jt_p.size):
        tq = jt_p[q]
        if abs(tq - s) <= 1e-12:
            return pre_p[q] if left else post_p[q]
        if tq > best_t and tq < s:
            best_t = tq
            v = post_p[q]
    return v


@njit(nogil=True)
def _pairwise_nb(A, B, k0, k1, offA, jtA, preA, postA, offB, jtB, preB, postB,
                 g0, dt, lo, hi, out):
    na = A.shape[0]
    nb = B.shape[0]
    for i in range(na):
        ja0, ja1 = offA[i], offA[i + 1]
        for j in range(nb):
            jb0, jb1 = offB[j], offB[j + 1]
            d = 0.0
            for g in range(k0, k1 + 1):
                v = abs(A[i, g] - B[j, g])
                if v > d:
                    d = v
            for side in range(2):
                if side == 0:
                    q0, q1 = ja0, ja1
                    jts = jtA
                else:
                    q0, q1 = jb0, jb1
                    jts = jtB
                for q in range(q0, q1):
                    s = jts[q]
                    if s <= lo + 1e-12 or s > hi + 1e-12:
                        continue
                    for left in (False, True):
                        va = _lookup(A[i], jtA[ja0:ja1], postA[ja0:ja1], preA[ja0:ja1], g0, dt, s, left)
                        vb = _lookup(B[j], jtB[jb0:jb1], postB[jb0:jb1], preB[jb0:jb1], g0, dt, s, left)
                        v = abs(va - vb)
                        if v > d:
                            d = v
            out[i, j] = d


def _lookup_np(path, jt_p, post_p, pre_p, g0, dt, s, left):
    g = int(math.floor(s / dt + 1e-9))
    v = path[g0 + g]
    best_t = g * dt
    for tq, po, pr in zip(jt_p, post_p, pre_p):
        if abs(tq - s) <= 1e-12:
            return pr if left else po
        if best_t < tq < s:
            best_t, v = tq, po
    return v


def _pairwise_np(A, B, k0, k1, offA, jtA, preA, postA, offB, jtB, preB, postB, g0, dt, lo, hi):
    out = np.zeros((A.shape[0], B.shape[0]))
    wa, wb = A[:, k0:k1 + 1], B[:, k0:k1 + 1]
    for i in range(A.shape[0]):
        out[i] = np.max(np.abs(wa[i][None, :] - wb), axis=1)
    # jump points: loop only over pairs where either side jumps inside the window
    def in_window(off, jt):
        cnt = np.zeros(off.size - 1, dtype=bool)
        for p in range(off.size - 1):
            s = jt[off[p]:off[p + 1]]
            cnt[p] = np.any((s > lo + 1e-12) & (s <= hi + 1e-12))
        return cnt
    ha, hb = in_window(offA, jtA), in_window(offB, jtB)
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            if not (ha[i] or hb[j]):
                continue
            sl_a, sl_b = slice(offA[i], offA[i + 1]), slice(offB[j], offB[j + 1])
            pts = np.concatenate([jtA[sl_a], jtB[sl_b]])
            pts = pts[(pts > lo + 1e-12) & (pts <= hi + 1e-12)]
            d = out[i, j]
            for s in pts:
                for left in (False, True):
                    va = _lookup_np(A[i], jtA[sl_a], postA[sl_a], preA[sl_a], g0, dt, s, left)
                    vb = _lookup_np(B[j], jtB[sl_b], postB[sl_b], preB[sl_b], g0, dt, s, left)
                    d = max(d, abs(va - vb))
            out[i, j] = d
    return out


def pairwise_window_sup(A, B, k_end, L, dt, jumpsA, jumpsB):
    """Sup distance between segment windows [t - tau, t] of two scalar ensembles.

    A, B: (P, G) grid paths (grid index L is time 0, spacing dt); ``k_end`` is
    the grid index of t.  ``jumps*`` = (off, jt, pre, post) with scalar
    pre/post arrays.  Points shared by both sides (common jump times) are
    compared post-to-post and pre-to-pre.
    """
    k0 = k_end - L
    lo, hi = (k0 - L) * dt, (k_end - L) * dt
    offA, jtA, preA, postA = jumpsA
    offB, jtB, preB, postB = jumpsB
    args = (np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(B, dtype=float), k0, k_end,
            offA, jtA, np.ascontiguousarray(preA, dtype=float), np.ascontiguousarray(postA, dtype=float),
            offB, jtB, np.ascontiguousarray(preB, dtype=float), np.ascontiguousarray(postB, dtype=float),
            L, dt, lo, hi)
    if use_numba():
        out = np.zeros((A.shape[0], B.shape[0]))
        _pairwise_nb(*args, out)
        return out
    return _pairwise_np(*args)
