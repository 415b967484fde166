"""Path-wise Malliavin quantities for the shear characteristics.

On a path y + sqrt(nu) B_s write U1(s) = u'(.), U2(s) = u''(.), and

    g(r)  = int_r^t U1 ds - (1/t) int_0^t int_m^t U1 ds dm
          = int_r^t U1 ds - (1/t) int_0^t s U1(s) ds          (Fubini)
    detM  = int_0^t g(r)^2 dr.

Two weights are exposed. ``y_weight`` is g / (nu detM), normalised so that
nu int Y g = 1. The Skorokhod integrand of the x-direction integration by
parts is Psi = g / (sqrt(nu) detM) = sqrt(nu) * y_weight; it satisfies
int Psi^2 = 1 / (nu detM), which is the Ito-isometry term, and its Malliavin
derivative is

    D_z Psi_r = K(z, r) / detM - 2 g(r) Q(z) / detM^2,
    K(z, r)   = int_{z v r}^t U2 ds - (1/t) int_z^t s U2(s) ds,
    Q(z)      = int_0^t g(r) K(z, r) dr.

All integrals use the trapezoid rule on the path grid.  The discrete kernel
is the exact derivative of the discrete functional: row l is the response to
a Cameron-Martin shift supported on the cell (s_{l-1}, s_l].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from ._stats import bootstrap_ci, bootstrap_stderr, fmean, tail_fraction
from .stochastic import BrownianPath, map_chunks, path_block, steps_for

log = logging.getLogger(__name__)

DET_FLOOR = 1e-300
MAX_DEGENERATE_FRACTION = 1e-4
MIN_MOMENT_SAMPLES = 10_000
HULL_GRID = 129

# |K| <= 2 t h  and  |Q| <= 2 t h int|g|  give the kernel envelope
# |D_z Psi_r| <= KERNEL_C1 t h / detM + KERNEL_C2 t h |g(r)| int|g| / detM^2,
# and with (int|g|)^2 <= t detM the double integral is bounded by
# TERM2_C t^2 (t h)^2 / detM^2.
KERNEL_C1 = 2.0
KERNEL_C2 = 4.0
TERM2_C = 2.0 * KERNEL_C1**2 + 2.0 * KERNEL_C2**2


class DegenerateSampleError(ArithmeticError):
    pass


class MalliavinInvariantError(AssertionError):
    pass


@dataclass
class MalliavinSample:
    y: float
    nu: float
    t: float
    g: np.ndarray
    detM: float
    Y: np.ndarray
    h_sup: float
    kernel: Optional[np.ndarray] = None
    kernel_trace: Optional[float] = None
    envelope_ratio: Optional[float] = None

    @property
    def dt(self) -> float:
        return self.t / (self.g.size - 1)


def trapezoid_weights(n_steps: int, dt: float) -> np.ndarray:
    w = np.full(n_steps + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _tail_integrals(values: np.ndarray, dt: float) -> np.ndarray:
    """Row-wise int_{s_i}^t of sampled values (trapezoid), ending in 0."""
    seg = 0.5 * dt * (values[..., :-1] + values[..., 1:])
    out = np.zeros(values.shape)
    out[..., :-1] = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
    return out


def _fubini_moment(values: np.ndarray, dt: float, t: float) -> np.ndarray:
    """(1/t) int_0^t s v(s) ds with the cell rule that matches _tail_integrals.

    Equals (1/t) * trapezoid(_tail_integrals(v)) exactly, so the g built from
    it integrates to zero up to roundoff.
    """
    n = values.shape[-1] - 1
    mids = dt * (np.arange(n) + 0.5)
    seg = 0.5 * dt * (values[..., :-1] + values[..., 1:])
    return (seg * mids).sum(axis=-1) / t


def _g_rows(u1: np.ndarray, dt: float, t: float) -> np.ndarray:
    return _tail_integrals(u1, dt) - _fubini_moment(u1, dt, t)[..., None]


def _hull_sup(profile, lo: np.ndarray, hi: np.ndarray, u2_path: np.ndarray) -> np.ndarray:
    """Grid max of |u''| over [lo, hi] per row, never below the path values."""
    frac = np.linspace(0.0, 1.0, HULL_GRID)
    pts = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
    grid_max = np.abs(profile.derivative(pts, 2)).max(axis=1)
    return np.maximum(grid_max, np.abs(u2_path).max(axis=1))


def g_function(profile, y: float, nu: float, path: BrownianPath, t: float) -> np.ndarray:
    m = steps_for(t, path.dt)
    if m < 1:
        raise ValueError("t must cover at least one path step")
    pos = y + math.sqrt(nu) * path.values[: m + 1]
    return _g_rows(profile.derivative(pos, 1), path.dt, t)


def g_double_integral(profile, y: float, nu: float, path: BrownianPath, t: float) -> np.ndarray:
    """g with the literal double integral (1/t) int_0^t int_m^t, no Fubini step."""
    m = steps_for(t, path.dt)
    pos = y + math.sqrt(nu) * path.values[: m + 1]
    tail = _tail_integrals(profile.derivative(pos, 1), path.dt)
    w = trapezoid_weights(m, path.dt)
    return tail - float(np.dot(w, tail)) / t


def malliavin_det(g: np.ndarray, dt: float) -> float:
    g = np.asarray(g, dtype=float)
    return float(np.dot(trapezoid_weights(g.size - 1, dt), g * g))


def y_weight(g: np.ndarray, detM: float, nu: float) -> np.ndarray:
    """Y(r) = g(r) / (nu detM)."""
    if not detM > DET_FLOOR:
        raise DegenerateSampleError(f"detM = {detM!r} is at the degenerate floor")
    return np.asarray(g) / (nu * detM)


def skorokhod_integrand(g: np.ndarray, detM: float, nu: float) -> np.ndarray:
    """Psi(r) = g(r) / (sqrt(nu) detM); int Psi^2 = 1 / (nu detM)."""
    return math.sqrt(nu) * y_weight(g, detM, nu)


def _kernel_parts(u2: np.ndarray, g: np.ndarray, dt: float, t: float):
    """G2 (tail integrals of U2), Kbar and Q, each in O(n)."""
    n = g.size - 1
    w = trapezoid_weights(n, dt)
    g2 = _tail_integrals(u2, dt)
    below = np.concatenate([[0.0], np.cumsum(w)[:-1]])             # sum_{i<l} w_i
    half = g2 + 0.5 * dt * u2                                         # value for l > i
    tail_wg2 = np.cumsum((w * g2)[::-1])[::-1]                        # sum_{i>=l} w_i G2_i
    kbar = (below * half + tail_wg2) / t
    wg = w * g
    below_wg = np.concatenate([[0.0], np.cumsum(wg)[:-1]])
    tail_wgg2 = np.cumsum((wg * g2)[::-1])[::-1]
    q = half * below_wg + tail_wgg2 - kbar * wg.sum()
    return g2, kbar, q


def _raw_kernel(u2: np.ndarray, g: np.ndarray, dt: float, t: float) -> np.ndarray:
    g2, kbar, _ = _kernel_parts(u2, g, dt, t)
    n = g.size - 1
    idx = np.arange(n + 1)
    rows, cols = np.meshgrid(idx, idx, indexing="ij")
    k0 = g2[np.maximum(rows, cols)] + np.where(rows > cols, 0.5 * dt * u2[rows], 0.0)
    return k0 - kbar[:, None]


def malliavin_kernel(profile, y: float, nu: float, path: BrownianPath, g: np.ndarray,
                     detM: float, t: float) -> np.ndarray:
    """Matrix D_z Psi_r, rows z (path cells), columns r (path nodes)."""
    if not detM > DET_FLOOR:
        raise DegenerateSampleError(f"detM = {detM!r} is at the degenerate floor")
    m = steps_for(t, path.dt)
    pos = y + math.sqrt(nu) * path.values[: m + 1]
    u2 = profile.derivative(pos, 2)
    k = _raw_kernel(u2, g, path.dt, t)
    w = trapezoid_weights(m, path.dt)
    q = k @ (w * g)
    return k / detM - 2.0 * np.outer(q, g) / detM**2


def kernel_envelope(g: np.ndarray, detM: float, h_sup: float, t: float, dt: float) -> np.ndarray:
    """Entry-wise upper bound for |D_z Psi_r| (constant in z)."""
    abs_int = float(np.dot(trapezoid_weights(g.size - 1, dt), np.abs(g)))
    return KERNEL_C1 * t * h_sup / detM + KERNEL_C2 * t * h_sup * np.abs(g) * abs_int / detM**2


def kernel_trace(kernel: np.ndarray, dt: float) -> float:
    """int int D_r Psi_z D_z Psi_r dz dr."""
    w = trapezoid_weights(kernel.shape[0] - 1, dt)
    return float(w @ ((kernel * kernel.T) @ w))


@numba.njit(cache=True)
def _ratio(value, bound):
    if bound > 0.0:
        return value / bound
    return 0.0 if value == 0.0 else np.inf


@numba.njit(cache=True)
def _trace_and_envelope(g2, u2, kbar, q, g, w, dt, t, det, h):
    """Fused O(n^2) pass: kernel trace and worst kernel/envelope ratio."""
    n1 = g.size
    abs_int = 0.0
    for i in range(n1):
        abs_int += w[i] * abs(g[i])
    a = KERNEL_C1 * t * h / det
    b = KERNEL_C2 * t * h * abs_int / (det * det)
    inv = 1.0 / det
    inv2 = 2.0 / (det * det)
    trace = 0.0
    worst = 0.0
    for l in range(n1):
        for i in range(l + 1):
            # entry (l, i) with l >= i and its transpose (i, l)
            k_li = g2[l] - kbar[l]
            if l > i:
                k_li += 0.5 * dt * u2[l]
            k_il = g2[l] - kbar[i]
            m_li = k_li * inv - inv2 * g[i] * q[l]
            m_il = k_il * inv - inv2 * g[l] * q[i]
            r1 = _ratio(abs(m_li), a + b * abs(g[i]))
            r2 = _ratio(abs(m_il), a + b * abs(g[l]))
            if r1 > worst:
                worst = r1
            if r2 > worst:
                worst = r2
            prod = w[l] * w[i] * m_li * m_il
            trace += prod if l == i else 2.0 * prod
    return trace, worst


@dataclass
class _Block:
    detM: np.ndarray
    h_sup: np.ndarray
    trace: Optional[np.ndarray]
    ratio: Optional[np.ndarray]


def _check_invariants(g: np.ndarray, det: np.ndarray, w: np.ndarray, t: float, where: str):
    abs_int = np.abs(g) @ w
    total = g @ w
    scale = np.maximum(abs_int, 1e-300)
    if np.any(np.abs(total) > 1e-10 * scale):
        raise MalliavinInvariantError(f"{where}: int g != 0")
    if np.any(det < 0):
        raise MalliavinInvariantError(f"{where}: detM < 0")
    ok = det > DET_FLOOR
    norm = (g * g) @ w
    if np.any(np.abs(norm[ok] / det[ok] - 1.0) > 1e-12):
        raise MalliavinInvariantError(f"{where}: nu int Y g != 1")
    if np.any(abs_int**2 > t * det * (1 + 1e-12) + 1e-300):
        raise MalliavinInvariantError(f"{where}: Cauchy-Schwarz bound on int|g| violated")


def _block(start, count, profile, y, nu, t, n_steps, seed, with_kernel) -> _Block:
    dt = t / n_steps
    paths = path_block(seed, start, count, dt, n_steps)
    pos = y + math.sqrt(nu) * paths
    g = _g_rows(profile.derivative(pos, 1), dt, t)
    w = trapezoid_weights(n_steps, dt)
    det = (g * g) @ w
    _check_invariants(g, det, w, t, f"samples {start}..{start + count - 1}")
    u2 = profile.derivative(pos, 2)
    h = _hull_sup(profile, pos.min(axis=1), pos.max(axis=1), u2)
    trace = ratio = None
    if with_kernel:
        trace = np.full(count, np.nan)
        ratio = np.full(count, np.nan)
        for row in range(count):
            if det[row] <= DET_FLOOR:
                continue
            g2, kbar, q = _kernel_parts(u2[row], g[row], dt, t)
            trace[row], ratio[row] = _trace_and_envelope(
                g2, u2[row], kbar, q, g[row], w, dt, t, det[row], h[row])
    return _Block(det, h, trace, ratio)


def _collect(profile, y, nu, t, n_samples, seed, n_steps, workers, with_kernel) -> _Block:
    parts = map_chunks(_block, n_samples, workers, (profile, y, nu, t, n_steps, seed, with_kernel))
    cat = lambda name: (None if getattr(parts[0], name) is None
                        else np.concatenate([getattr(p, name) for p in parts]))
    return _Block(cat("detM"), cat("h_sup"), cat("trace"), cat("ratio"))


def malliavin_sample(profile, y: float, nu: float, t: float, path: BrownianPath,
                     with_kernel: bool = False) -> MalliavinSample:
    g = g_function(profile, y, nu, path, t)
    m = g.size - 1
    w = trapezoid_weights(m, path.dt)
    det = float(np.dot(w, g * g))
    _check_invariants(g[None, :], np.array([det]), w, t, f"path {path.sample_index}")
    pos = y + math.sqrt(nu) * path.values[: m + 1]
    u2 = profile.derivative(pos, 2)
    h = float(_hull_sup(profile, np.array([pos.min()]), np.array([pos.max()]), u2[None, :])[0])
    sample = MalliavinSample(float(y), float(nu), float(t), g, det, y_weight(g, det, nu), h)
    if with_kernel:
        kern = malliavin_kernel(profile, y, nu, path, g, det, t)
        sample.kernel = kern
        sample.kernel_trace = kernel_trace(kern, path.dt)
        env = np.broadcast_to(kernel_envelope(g, det, h, t, path.dt)[None, :], kern.shape)
        # a zero envelope (u'' = 0 on the hull) forces a zero kernel: ratio 0
        ratio = np.divide(np.abs(kern), env, out=np.zeros(kern.shape), where=env > 0)
        ratio[(env == 0) & (kern != 0)] = np.inf
        sample.envelope_ratio = float(ratio.max())
    return sample


@dataclass(frozen=True)
class SkorokhodEstimate:
    term1: float
    term2: float
    stderr1: float
    stderr2: float
    n_samples: int
    term2_envelope: float = math.nan
    max_envelope_ratio: float = math.nan

    @property
    def total(self) -> float:
        return self.term1 + self.term2

    @property
    def total_stderr(self) -> float:
        return math.hypot(self.stderr1, self.stderr2)


def _term2_envelope(det, h, t) -> np.ndarray:
    return TERM2_C * t**2 * (t * h) ** 2 / det**2


def skorokhod_variance(samples: Sequence[MalliavinSample], with_kernel: bool = True,
                       n_boot: int = 200, seed: int = 0) -> SkorokhodEstimate:
    """E(delta Psi)^2 = E[1/(nu detM)] + E int int D_r Psi_z D_z Psi_r."""
    if not samples:
        raise ValueError("empty sample list")
    first = samples[0]
    if any((s.y, s.nu, s.t) != (first.y, first.nu, first.t) for s in samples):
        raise ValueError("samples must share (y, nu, t)")
    det = np.array([s.detM for s in samples])
    h = np.array([s.h_sup for s in samples])
    t1 = 1.0 / (first.nu * det)
    if with_kernel:
        missing = [i for i, s in enumerate(samples) if s.kernel is None and s.kernel_trace is None]
        if missing:
            raise ValueError(f"with_kernel=True but samples {missing[:5]} carry no kernel")
        t2 = np.array([s.kernel_trace if s.kernel_trace is not None else kernel_trace(s.kernel, s.dt)
                       for s in samples])
        ratios = [s.envelope_ratio for s in samples if s.envelope_ratio is not None]
        worst = max(ratios) if ratios else math.nan
    else:
        t2 = np.zeros_like(t1)
        worst = math.nan
    return SkorokhodEstimate(
        fmean(t1), fmean(t2), bootstrap_stderr(t1, n_boot, seed), bootstrap_stderr(t2, n_boot, seed),
        len(samples), fmean(_term2_envelope(det, h, first.t)), worst)


def skorokhod_scan(profile, y: float, nu: float, t: float, n_samples: int, seed: int,
                   n_steps: int = 1024, workers: int = 1, n_boot: int = 200) -> SkorokhodEstimate:
    """Streaming version of skorokhod_variance that never stores kernels."""
    if n_samples < 1:
        raise ValueError("empty sample list")
    blk = _collect(profile, y, nu, t, n_samples, seed, n_steps, workers, True)
    bad = blk.detM <= DET_FLOOR
    _report_degenerate(bad, seed)
    det, h = blk.detM[~bad], blk.h_sup[~bad]
    t1 = 1.0 / (nu * det)
    t2 = blk.trace[~bad]
    return SkorokhodEstimate(
        fmean(t1), fmean(t2), bootstrap_stderr(t1, n_boot, seed), bootstrap_stderr(t2, n_boot, seed),
        int(det.size), fmean(_term2_envelope(det, h, t)), float(np.max(blk.ratio[~bad])))


def _report_degenerate(bad: np.ndarray, seed: int):
    n_bad = int(bad.sum())
    if n_bad:
        for idx in np.flatnonzero(bad)[:20]:
            log.warning("degenerate detM: seed=%d sample_index=%d", seed, idx)
    if n_bad > MAX_DEGENERATE_FRACTION * bad.size:
        raise DegenerateSampleError(f"{n_bad}/{bad.size} samples have detM below {DET_FLOOR}")


@dataclass(frozen=True)
class InverseMoment:
    estimate: float
    ci_lo: float
    ci_hi: float
    tail_frac: float
    n_samples: int
    n_degenerate: int


def inverse_moment(profile, y: float, nu: float, t: float, p: int, n_samples: int, seed: int,
                   n_steps: int = 1024, workers: int = 1, n_boot: int = 400) -> InverseMoment:
    """E[detM^-p] with a 95% percentile-bootstrap interval and tail diagnostic."""
    if p not in (0, 1, 2):
        raise ValueError("p must be 1 or 2 (0 allowed as a sanity check)")
    if n_samples < MIN_MOMENT_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_MOMENT_SAMPLES}")
    if p == 0:
        return InverseMoment(1.0, 1.0, 1.0, 0.0, n_samples, 0)
    blk = _collect(profile, y, nu, t, n_samples, seed, n_steps, workers, False)
    bad = blk.detM <= DET_FLOOR
    _report_degenerate(bad, seed)
    values = blk.detM[~bad] ** (-p)
    lo, hi = bootstrap_ci(values, 0.95, n_boot, seed)
    return InverseMoment(fmean(values), lo, hi, tail_fraction(values), n_samples, int(bad.sum()))


def detM_samples(profile, y: float, nu: float, t: float, n_samples: int, seed: int,
                 n_steps: int = 1024, workers: int = 1) -> np.ndarray:
    return _collect(profile, y, nu, t, n_samples, seed, n_steps, workers, False).detM


def _holder_constant(x: np.ndarray, v: np.ndarray, alpha: float) -> float:
    dx = np.abs(x[:, None] - x[None, :])
    dv = np.abs(v[:, None] - v[None, :])
    np.fill_diagonal(dx, 1.0)
    return float((dv / dx**alpha).max())


def check_interpolation(x: np.ndarray, values: np.ndarray, derivs: np.ndarray, alpha: float) -> bool:
    """Grid test of ||f'|| <= 4 ||f|| max{1/t, ||f||^(-1/(1+a)) [f']_a^(1/(1+a))}."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    x = np.asarray(x, dtype=float)
    t = float(x[-1] - x[0])
    sup_f = float(np.max(np.abs(values)))
    sup_df = float(np.max(np.abs(derivs)))
    if sup_f == 0.0:
        return sup_df == 0.0
    holder = _holder_constant(x, np.asarray(derivs, dtype=float), alpha)
    expo = 1.0 / (1.0 + alpha)
    rhs = 4.0 * sup_f * max(1.0 / t, sup_f ** (-expo) * holder**expo)
    return sup_df <= rhs
