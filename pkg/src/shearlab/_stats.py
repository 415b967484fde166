"""Order-insensitive reductions and seeded bootstrap helpers."""

from __future__ import annotations

import math

import numpy as np

BOOTSTRAP_SALT = 0xB007


def fmean(values) -> float:
    """Exactly rounded mean: the result does not depend on summation order."""
    values = np.asarray(values, dtype=float).ravel()
    return math.fsum(values.tolist()) / values.size


def bootstrap_means(values, n_boot: int, seed: int) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), BOOTSTRAP_SALT]))
    n = values.size
    out = np.empty(n_boot)
    for b in range(n_boot):
        out[b] = values[rng.integers(0, n, n)].mean()
    return out


def bootstrap_stderr(values, n_boot: int = 200, seed: int = 0) -> float:
    return float(np.std(bootstrap_means(values, n_boot, seed), ddof=1))


def bootstrap_ci(values, level: float = 0.95, n_boot: int = 400, seed: int = 0) -> tuple[float, float]:
    means = bootstrap_means(values, n_boot, seed)
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(lo), float(hi)


def tail_fraction(values, top: float = 0.01) -> float:
    """Share of the total carried by the largest `top` fraction of summands."""
    values = np.sort(np.abs(np.asarray(values, dtype=float).ravel()))
    total = math.fsum(values.tolist())
    if total == 0.0:
        return 0.0
    m = max(1, int(math.ceil(top * values.size)))
    return math.fsum(values[-m:].tolist()) / total
