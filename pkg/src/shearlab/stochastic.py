"""Brownian paths, stochastic characteristics and Feynman-Kac estimates.

Paths are drawn from counter-based Philox streams keyed by the run seed, one
stream per sample index, so any subset of samples can be regenerated in any
order (and on any worker) with identical bits.

The solution of the shear equation is evaluated in backward form

    f(t, x, y) = E f0(x - I_t, y + sqrt(nu) B_t),   I_t = int_0^t u(y + sqrt(nu) B_s) ds,

which is the inverse-characteristic representation written out for a shear.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._stats import bootstrap_stderr, fmean

CHUNK = 512
PATH_STREAM = 0
MIN_SAMPLES = 100


@dataclass(frozen=True)
class BrownianPath:
    dt: float
    n_steps: int
    values: np.ndarray
    seed: int
    sample_index: int
    debug: bool = False

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return seed


def standard_normals(seed: int, sample_index: int, n: int) -> np.ndarray:
    """n standard normals from the stream of (seed, sample_index)."""
    bitgen = np.random.Philox(key=[_check_seed(seed), PATH_STREAM], counter=[0, 0, int(sample_index), 0])
    return np.random.Generator(bitgen).standard_normal(n)


def path_block(seed: int, start: int, count: int, dt: float, n_steps: int) -> np.ndarray:
    """Rows B_0..B_n for sample indices start..start+count-1."""
    out = np.zeros((count, n_steps + 1))
    step = math.sqrt(dt)
    for row in range(count):
        np.cumsum(step * standard_normals(seed, start + row, n_steps), out=out[row, 1:])
    return out


def sample_path(seed: int, sample_index: int, dt: float, n_steps: int) -> BrownianPath:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    values = path_block(seed, sample_index, 1, dt, n_steps)[0]
    return BrownianPath(float(dt), int(n_steps), values, int(seed), int(sample_index))


def zero_path(dt: float, n_steps: int) -> BrownianPath:
    """Debug path B == 0, for analytic tests only."""
    return BrownianPath(float(dt), int(n_steps), np.zeros(n_steps + 1), 0, -1, debug=True)


def steps_for(t: float, dt: float) -> int:
    """Number of grid steps covering [0, t]; t must sit on the path grid."""
    m = t / dt
    steps = int(round(m))
    if abs(m - steps) > 1e-9 * max(1.0, m):
        raise ValueError(f"t={t} is not a multiple of the path step dt={dt}")
    return steps


def trapezoid_rows(values: np.ndarray, dt: float) -> np.ndarray:
    """Row-wise trapezoid integral of uniformly sampled values."""
    return dt * (values.sum(axis=-1) - 0.5 * (values[..., 0] + values[..., -1]))


@dataclass(frozen=True)
class CharacteristicSample:
    y: float
    path: BrownianPath
    shift: float
    endpoint: float


def characteristics(profile, y: float, nu: float, t: float, path: BrownianPath) -> CharacteristicSample:
    """X^1 shift I_t (trapezoid on the path grid) and X^2_t = y + sqrt(nu) B_t.

    nu = 0 is accepted here only as a degenerate test case.
    """
    if nu < 0:
        raise ValueError("nu must be >= 0")
    if t > path.horizon * (1 + 1e-12):
        raise ValueError("path horizon is shorter than t")
    m = steps_for(t, path.dt)
    b = path.values[: m + 1]
    pos = y + math.sqrt(nu) * b
    shift = float(trapezoid_rows(profile.derivative(pos, 0), path.dt)) if m else 0.0
    return CharacteristicSample(float(y), path, shift, float(pos[-1]))


class FourierDatum:
    """Real initial datum f0(x, y) = sum c exp(i (k x + eta y)) with k != 0.

    Rows come as (k, eta, c); the row set must be closed under
    (k, eta, c) -> (-k, -eta, conj c) so that f0 is real.
    """

    def __init__(self, rows: Sequence[tuple]):
        table: dict[tuple[int, int], complex] = {}
        for row in rows:
            if len(row) != 3:
                raise ValueError(f"Fourier row {row!r} must be (k, eta, coefficient)")
            k, eta, c = row
            if int(k) != k or int(eta) != eta:
                raise ValueError(f"Fourier row {row!r} needs integer wavenumbers")
            if k == 0:
                raise ValueError("k = 0 rows are forbidden (f0 must have zero x-mean)")
            key = (int(k), int(eta))
            table[key] = table.get(key, 0j) + complex(c)
        if not table:
            raise ValueError("empty Fourier datum")
        for (k, eta), c in table.items():
            partner = table.get((-k, -eta))
            if partner is None or abs(partner - c.conjugate()) > 1e-12 * max(1.0, abs(c)):
                raise ValueError(f"datum is not real: row ({k}, {eta}) lacks its conjugate partner")
        self.table = table

    @classmethod
    def cos_x(cls) -> "FourierDatum":
        return cls([(1, 0, 0.5), (-1, 0, 0.5)])

    @property
    def rows(self) -> list[tuple[int, int, complex]]:
        return [(k, eta, c) for (k, eta), c in sorted(self.table.items())]

    def x_modes(self) -> list[int]:
        return sorted({k for k, _ in self.table})

    def y_series(self, k: int) -> list[tuple[int, complex]]:
        return [(eta, c) for (kk, eta), c in sorted(self.table.items()) if kk == k]

    def shifted(self, a: float) -> "FourierDatum":
        """Datum of f0(x - a, y)."""
        return FourierDatum([(k, eta, c * np.exp(-1j * k * a)) for (k, eta), c in self.table.items()])

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
        for (k, eta), c in self.table.items():
            total = total + c * np.exp(1j * (k * x + eta * y))
        return total.real

    def sup_bound(self) -> float:
        return float(sum(abs(c) for c in self.table.values()))


def y_series_eval(series: Sequence[tuple[int, complex]], y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    total = np.zeros(y.shape, dtype=complex)
    for eta, c in series:
        total = total + complex(c) * np.exp(1j * eta * y)
    return total


def map_chunks(func: Callable, n_samples: int, workers: int = 1, args: tuple = ()) -> list:
    """Apply func(start, count, *args) over fixed-size index chunks.

    Chunk boundaries depend only on n_samples, and results come back in
    index order, so the output is independent of the worker count.
    """
    starts = list(range(0, n_samples, CHUNK))
    counts = [min(CHUNK, n_samples - s) for s in starts]
    if workers <= 1 or len(starts) == 1:
        return [func(s, c, *args) for s, c in zip(starts, counts)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(func, s, c, *args) for s, c in zip(starts, counts)]
        return [f.result() for f in futures]


def _fk_chunk(start, count, profile, datum, t, nu, x, y, n_steps, seed):
    dt = t / n_steps
    pos = y + math.sqrt(nu) * path_block(seed, start, count, dt, n_steps)
    shift = trapezoid_rows(profile.derivative(pos, 0), dt)
    return datum(x - shift, pos[:, -1])


def _mode_fk_chunk(start, count, profile, k, series, t, nu, y, n_steps, seed):
    dt = t / n_steps
    pos = y + math.sqrt(nu) * path_block(seed, start, count, dt, n_steps)
    shift = trapezoid_rows(profile.derivative(pos, 0), dt)
    return np.exp(-1j * k * shift) * y_series_eval(series, pos[:, -1])


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    n_samples: int


def _validate_mc(n_samples: int, t: float, nu: float):
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples={n_samples} < {MIN_SAMPLES}: bootstrap stderr is meaningless")
    if t < 0 or nu <= 0:
        raise ValueError("need t >= 0 and nu > 0")


def feynman_kac(profile, f0: FourierDatum, t: float, nu: float, x: float, y: float,
                n_samples: int, seed: int, n_steps: int = 4096, workers: int = 1,
                n_boot: int = 200) -> MCEstimate:
    """Monte Carlo f(t, x, y) with a bootstrap standard error."""
    _validate_mc(n_samples, t, nu)
    if t == 0:
        return MCEstimate(float(f0(x, y)), 0.0, n_samples)
    parts = map_chunks(_fk_chunk, n_samples, workers, (profile, f0, t, nu, x, y, n_steps, seed))
    values = np.concatenate(parts)
    return MCEstimate(fmean(values), bootstrap_stderr(values, n_boot, seed), n_samples)


def mode_feynman_kac(profile, k: int, f0k: Sequence[tuple[int, complex]], t: float, nu: float,
                     y: float, n_samples: int, seed: int, n_steps: int = 4096, workers: int = 1,
                     n_boot: int = 200) -> tuple[complex, tuple[float, float]]:
    """E[exp(-i k I_t) f0k(y + sqrt(nu) B_t)] with componentwise bootstrap stderr."""
    _validate_mc(n_samples, t, nu)
    if t == 0:
        return complex(y_series_eval(f0k, y)), (0.0, 0.0)
    parts = map_chunks(_mode_fk_chunk, n_samples, workers, (profile, k, list(f0k), t, nu, y, n_steps, seed))
    values = np.concatenate(parts)
    est = complex(fmean(values.real), fmean(values.imag))
    err = (bootstrap_stderr(values.real, n_boot, seed), bootstrap_stderr(values.imag, n_boot, seed))
    return est, err
