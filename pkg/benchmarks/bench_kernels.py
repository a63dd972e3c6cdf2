"""Compiled vs numpy fallback: coupled Euler batch and pairwise window distances.

    python3 benchmarks/bench_kernels.py [--paths 4096] [--repeat 3]

Both paths run in one process; the fallback is selected per call through
ERGO_SFDE_NO_NUMBA.  Results are checked for agreement before timing.
"""
import argparse
import os
import time

import numpy as np

from ergo_sfde._accel import HAS_NUMBA
from ergo_sfde.model import make_builtin
from ergo_sfde.segment import Segment
from ergo_sfde.sim import SimConfig, simulate_batch
from ergo_sfde.transport import window_cost


def _timed(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _with_fallback(flag, fn):
    old = os.environ.get("ERGO_SFDE_NO_NUMBA")
    os.environ["ERGO_SFDE_NO_NUMBA"] = "1" if flag else "0"
    try:
        return fn()
    finally:
        if old is None:
            del os.environ["ERGO_SFDE_NO_NUMBA"]
        else:
            os.environ["ERGO_SFDE_NO_NUMBA"] = old


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=4096)
    ap.add_argument("--ensemble", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba unavailable; nothing to compare")
        return

    model = make_builtin("linear_delay", dict(g1=0.5))
    xi, eta = Segment.constant(1.0, 1.0), Segment.constant(1.0, 0.0)
    cfg = SimConfig(0.01, 10.0)
    sim = lambda: simulate_batch(model, xi, cfg, args.paths, eta=eta, lam=2.0)
    sim()  # compile outside the timing
    rows = []
    t_nb, a = _timed(sim, args.repeat)
    t_np, b = _with_fallback(True, lambda: _timed(sim, args.repeat))
    err = float(np.max(np.abs(a.Y - b.Y)))
    rows.append(("coupled euler", args.paths, t_nb, t_np, err))

    ens = simulate_batch(model, xi, cfg, args.ensemble)
    cost = lambda: window_cost(ens, 5.0, ens, 10.0)
    cost()
    t_nb, a = _timed(cost, args.repeat)
    t_np, b = _with_fallback(True, lambda: _timed(cost, args.repeat))
    rows.append(("pairwise window sup", args.ensemble, t_nb, t_np, float(np.max(np.abs(a - b)))))

    print(f"{'kernel':<22}{'size':>7}{'numba s':>11}{'numpy s':>11}{'speedup':>9}{'max diff':>11}")
    for name, size, tn, tp, e in rows:
        print(f"{name:<22}{size:>7}{tn:>11.4f}{tp:>11.4f}{tp / tn:>9.1f}{e:>11.2e}")


if __name__ == "__main__":
    main()
