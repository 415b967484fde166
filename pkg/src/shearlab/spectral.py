"""Fourier-collocation solver for a single x-mode of the shear equation.

Mode k of  df/dt + u(y) df/dx = (nu/2) d^2f/dy^2  evolves under

    L_k = -i k diag(u(y_j)) + (nu/2) D2,

with D2 the periodic spectral second-derivative matrix on n_y uniform points.
Propagators are dense matrix exponentials; the L2 -> L2 operator norm is the
largest singular value (the collocation inner product is a multiple of the
Euclidean one, so it does not change the norm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .profiles import ShearProfile

EXPM_NORM_LIMIT = 1e12


class PropagatorOverflow(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModeProblem:
    k: int
    nu: float
    n_y: int
    profile: ShearProfile

    def __post_init__(self):
        if not getattr(self.profile, "periodic", False):
            raise ValueError("spectral solver needs a periodic (trigonometric) profile")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be an integer >= 1 (k=0 is removed by the mean-zero condition), got {self.k!r}")
        if not (0.0 < self.nu <= 1.0):
            raise ValueError(f"nu must lie in (0, 1], got {self.nu!r}")
        n = int(self.n_y)
        if n != self.n_y or n < 4 or n & (n - 1):
            raise ValueError(f"n_y must be a power of two, got {self.n_y!r}")
        if n < 4 * self.profile.degree:
            raise ValueError(f"n_y={n} under-resolves a degree-{self.profile.degree} profile (need >= {4 * self.profile.degree})")

    @property
    def grid(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_y) / self.n_y


@dataclass(frozen=True)
class Propagator:
    matrix: np.ndarray
    t: float
    problem: Optional[ModeProblem] = None


def wavenumbers(n: int) -> np.ndarray:
    """Integer wavenumbers in FFT order: 0, 1, ..., n/2-1, -n/2, ..., -1."""
    return np.fft.fftfreq(n, 1.0 / n)


def second_derivative_matrix(n: int) -> np.ndarray:
    """Real symmetric circulant matrix with Fourier symbol -eta^2."""
    column = np.real(np.fft.ifft(-wavenumbers(n) ** 2))
    d2 = scipy.linalg.circulant(column)
    return 0.5 * (d2 + d2.T)


def build_generator(problem: ModeProblem) -> np.ndarray:
    u = problem.profile.derivative(problem.grid, 0)
    gen = (0.5 * problem.nu) * second_derivative_matrix(problem.n_y).astype(complex)
    gen[np.diag_indices(problem.n_y)] += -1j * problem.k * u
    return gen


def propagate(generator: np.ndarray, t: float, problem: Optional[ModeProblem] = None) -> Propagator:
    """exp(t L) by scaling-and-squaring Pade (scipy.linalg.expm)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    n = generator.shape[0]
    if t == 0:
        return Propagator(np.eye(n, dtype=complex), 0.0, problem)
    scaled = t * generator
    size = np.linalg.norm(scaled, 1)
    if not np.isfinite(size) or size > EXPM_NORM_LIMIT:
        raise PropagatorOverflow(f"||t L||_1 = {size:.3g} is beyond the expm guard")
    return Propagator(scipy.linalg.expm(scaled), float(t), problem)


def semigroup_norm(p) -> float:
    matrix = p.matrix if isinstance(p, Propagator) else np.asarray(p)
    return float(np.linalg.norm(matrix, 2))


class _NormOracle:
    """Caches the generator so repeated norm evaluations only pay for expm + SVD."""

    def __init__(self, problem: ModeProblem):
        self.problem = problem
        self.generator = build_generator(problem)

    def __call__(self, t: float) -> float:
        return semigroup_norm(propagate(self.generator, t, self.problem))


def decay_time(problem: ModeProblem, threshold: float = 0.5, rtol: float = 1e-3,
               t_cap: Optional[float] = None) -> Optional[float]:
    """Smallest t with ||S(t) P_k|| <= threshold, or None if not reached by t = 1/nu."""
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold!r}")
    if threshold == 1.0:
        return 0.0
    cap = 1.0 / problem.nu if t_cap is None else float(t_cap)
    norm = _NormOracle(problem)

    lo, hi = 0.0, min(1.0, cap)
    while norm(hi) > threshold:
        if hi >= cap:
            return None
        lo, hi = hi, min(2.0 * hi, cap)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if norm(mid) > threshold:
            lo = mid
        else:
            hi = mid
    return hi


def norm_curve(problem: ModeProblem, times: Sequence[float]) -> list[tuple[float, float]]:
    """(t, ||S(t) P_k||) along sorted times, stepping the propagator forward."""
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted")
    if times and times[0] < 0:
        raise ValueError("times must be >= 0")
    gen = build_generator(problem)
    current = np.eye(problem.n_y, dtype=complex)
    last = 0.0
    out = []
    for t in times:
        if t > last:
            current = propagate(gen, t - last).matrix @ current
            last = t
        out.append((t, semigroup_norm(current)))
    return out


def trig_interpolate(values: np.ndarray, y) -> np.ndarray:
    """Evaluate the band-limited interpolant of grid values at arbitrary y."""
    values = np.asarray(values)
    n = values.size
    coeffs = np.fft.fft(values) / n
    eta = wavenumbers(n)
    # split the Nyquist mode symmetrically so real data stay real
    weights = np.ones(n)
    weights[n // 2] = 0.5
    y = np.atleast_1d(np.asarray(y, dtype=float))
    phases = np.exp(1j * np.outer(y, eta))
    body = phases @ (coeffs * weights)
    body += coeffs[n // 2] * 0.5 * np.exp(1j * y * (n // 2))
    return body


def evolve_mode(problem: ModeProblem, initial: np.ndarray, t: float) -> np.ndarray:
    """Collocation values of the mode-k solution at time t."""
    initial = np.asarray(initial, dtype=complex)
    return propagate(build_generator(problem), t, problem).matrix @ initial


def solve_fourier_datum(profile: ShearProfile, datum, t: float, nu: float, x, y, n_y: int = 128):
    """Real-space solution f(t, x, y) for f0 = sum c exp(i(k x + eta y)).

    Each x-mode is propagated independently and interpolated in y.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
    for k in datum.x_modes():
        series = datum.y_series(k)
        prob = ModeProblem(abs(k), nu, n_y, profile)
        grid = prob.grid
        init = sum(c * np.exp(1j * eta * grid) for eta, c in series)
        if k > 0:
            vals = evolve_mode(prob, init, t)
        else:
            # mode -k is the conjugate problem: conj(exp(t L_|k|)) acting on conj data
            vals = np.conj(evolve_mode(prob, np.conj(init), t))
        total += np.exp(1j * k * x) * trig_interpolate(vals, y)
    return total
