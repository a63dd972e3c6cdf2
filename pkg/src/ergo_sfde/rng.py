"""Counter-based random streams.

Every path owns independent Philox streams keyed by
``(master_seed, path_index, substream)``, so a path's noise does not depend on
how paths are batched or distributed over workers, and coupled processes can
share exactly the substreams they are meant to share.
"""
import numpy as np

SUBSTREAMS = {"brownian": 0, "jumptimes": 1, "marks": 2, "bridge": 3}
_MASK64 = (1 << 64) - 1


def stream(master_seed: int, path_index: int, substream: str) -> np.random.Generator:
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    key = np.array([int(master_seed) & _MASK64, ((int(path_index) << 3) | SUBSTREAMS[substream]) & _MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_normals(master_seed, path_index, n_steps, m):
    """Standard normals for the Brownian increments; prefix-stable in ``n_steps``."""
    return stream(master_seed, path_index, "brownian").standard_normal((n_steps, m))


def poisson_times(rng, rate, horizon):
    """Arrival times in (0, horizon] from exponential inter-arrivals."""
    if rate <= 0 or horizon <= 0:
        return np.zeros(0)
    block = int(rate * horizon + 4 * np.sqrt(rate * horizon) + 8)
    parts, last = [], 0.0
    while True:
        gaps = rng.standard_exponential(block) / rate
        t = last + np.cumsum(gaps)
        parts.append(t)
        last = t[-1]
        if last > horizon:
            break
    t = np.concatenate(parts)
    return t[t <= horizon]
