"""Shear profiles u: T -> R as trigonometric polynomials.

A profile is stored by its Fourier coefficients, so every derivative is
evaluated exactly by term-by-term differentiation and critical points can be
classified by order without numerical differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi

# u^(d) cycles through these (cos, sin) coefficient maps with period 4
_COS_CYCLE = ((1, 0), (0, -1), (-1, 0), (0, 1))  # d/dy^d cos = c*cos + s*sin
_SIN_CYCLE = ((0, 1), (1, 0), (0, -1), (-1, 0))

ROOT_GRID = 2**14
ROOT_TOL = 1e-12
ORDER_THRESHOLD = 1e-8
DERIVATIVE_CAP = 8
BALL_GRID = 10_000


class ProfileError(ValueError):
    pass


class CriticalPointError(RuntimeError):
    """A zero of u' whose order exceeds the derivative cap (near-flat profile)."""


@dataclass(frozen=True)
class ShearProfile:
    """u(y) = sum_m a_m cos(m y) + b_m sin(m y), m = 1..M."""

    cos_coeffs: tuple[float, ...]
    sin_coeffs: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        a = tuple(float(v) for v in self.cos_coeffs)
        b = tuple(float(v) for v in self.sin_coeffs)
        size = max(len(a), len(b))
        if size == 0:
            raise ProfileError("profile needs at least one mode")
        a = a + (0.0,) * (size - len(a))
        b = b + (0.0,) * (size - len(b))
        if not all(math.isfinite(v) for v in a + b):
            raise ProfileError("profile coefficients must be finite")
        if not any(v != 0.0 for v in a + b):
            raise ProfileError("profile is constant (all coefficients zero)")
        object.__setattr__(self, "cos_coeffs", a)
        object.__setattr__(self, "sin_coeffs", b)

    @property
    def degree(self) -> int:
        return len(self.cos_coeffs)

    @property
    def periodic(self) -> bool:
        return True

    @classmethod
    def from_modes(cls, modes: Iterable[Sequence[float]], name: str = "custom") -> "ShearProfile":
        """Build from (m, a_m, b_m) triples; repeated modes are summed."""
        modes = [tuple(row) for row in modes]
        if not modes:
            raise ProfileError("empty mode list")
        top = 0
        for row in modes:
            if len(row) != 3:
                raise ProfileError(f"mode entry {row!r} is not a (m, a, b) triple")
            m = row[0]
            if int(m) != m or m < 1:
                raise ProfileError(f"mode number {m!r} must be an integer >= 1")
            top = max(top, int(m))
        a = [0.0] * top
        b = [0.0] * top
        for m, am, bm in modes:
            a[int(m) - 1] += float(am)
            b[int(m) - 1] += float(bm)
        return cls(tuple(a), tuple(b), name=name)

    def modes(self) -> list[tuple[int, float, float]]:
        return [
            (m, a, b)
            for m, (a, b) in enumerate(zip(self.cos_coeffs, self.sin_coeffs), start=1)
            if a != 0.0 or b != 0.0
        ]

    def derivative(self, y, d: int = 0):
        if d < 0:
            raise ValueError("derivative order must be >= 0")
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        cc, cs = _COS_CYCLE[d % 4]
        sc, ss = _SIN_CYCLE[d % 4]
        for m, a, b in self.modes():
            scale = float(m) ** d
            # coefficient of cos(my) and sin(my) in the d-th derivative
            pc = scale * (a * cc + b * sc)
            ps = scale * (a * cs + b * ss)
            if pc != 0.0:
                out = out + pc * np.cos(m * y)
            if ps != 0.0:
                out = out + ps * np.sin(m * y)
        return out if out.ndim else float(out)

    def sup_norm(self, d: int = 0) -> float:
        """Bound on sup|u^(d)| from the coefficients (triangle inequality)."""
        return sum(float(m) ** d * math.hypot(a, b) for m, a, b in self.modes())


@dataclass(frozen=True)
class LinearShear:
    """Debug-only Couette profile u(y) = c*y, so u' is the constant c.

    Not periodic; only the path functionals (characteristics, Malliavin
    quantities) accept it, where it gives closed-form answers.
    """

    slope: float = 1.0
    name: str = "linear"
    debug: bool = field(default=True, init=False)

    def __post_init__(self):
        if not math.isfinite(self.slope) or self.slope == 0.0:
            raise ProfileError("linear shear slope must be finite and nonzero")

    @property
    def degree(self) -> int:
        return 1

    @property
    def periodic(self) -> bool:
        return False

    def derivative(self, y, d: int = 0):
        if d < 0:
            raise ValueError("derivative order must be >= 0")
        y = np.asarray(y, dtype=float)
        if d == 0:
            out = self.slope * y
        elif d == 1:
            out = np.full_like(y, self.slope)
        else:
            out = np.zeros_like(y)
        return out if out.ndim else float(out)

    def sup_norm(self, d: int = 0) -> float:
        if d == 0:
            return math.inf
        return abs(self.slope) if d == 1 else 0.0


def evaluate(profile, y, d: int = 0):
    """u^(d)(y); vectorised over y."""
    return profile.derivative(y, d)


@dataclass(frozen=True)
class CriticalPoint:
    location: float
    order: int
    radius: float
    taylor_constants: tuple[float, float, float, float]

    @property
    def c1(self) -> float:
        return self.taylor_constants[0]

    @property
    def c2(self) -> float:
        return self.taylor_constants[1]

    @property
    def c3(self) -> float:
        return self.taylor_constants[2]

    @property
    def c4(self) -> float:
        return self.taylor_constants[3]


def _periodic_distance(a: float, b: float) -> float:
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


def _sign_change_roots(func, grid: np.ndarray, tol: float) -> list[float]:
    vals = func(grid)
    nxt = np.roll(vals, -1)
    roots = []
    for i in np.flatnonzero(vals == 0.0):
        roots.append(float(grid[i]))
    for i in np.flatnonzero(vals * nxt < 0.0):
        lo = float(grid[i])
        hi = lo + TWO_PI / grid.size
        f_lo, f_hi = func(lo), func(hi)
        if f_lo * f_hi >= 0.0:
            # the wrap-around cell: f(2 pi) and f(0) differ only by roundoff
            roots.append((lo if abs(f_lo) <= abs(f_hi) else hi) % TWO_PI)
            continue
        roots.append(brentq(func, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps) % TWO_PI)
    return roots


def _order_at(profile: ShearProfile, y0: float, cap: int) -> int:
    for n in range(1, cap + 1):
        if abs(profile.derivative(y0, n + 1)) > ORDER_THRESHOLD:
            return n
    raise CriticalPointError(
        f"critical point at y={y0:.12g} has order > {cap}; profile is too flat there"
    )


def _locate_zeros(profile: ShearProfile, tol: float, cap: int) -> list[float]:
    grid = np.arange(ROOT_GRID) * (TWO_PI / ROOT_GRID)
    scale = max(profile.sup_norm(1), 1.0)
    found: list[float] = []
    # a zero of u' of multiplicity m shows up as a sign change of u^(j) for
    # some j <= m, so scan successive derivatives and keep true zeros of u'
    for j in range(1, cap + 1):
        for r in _sign_change_roots(lambda z, j=j: profile.derivative(z, j), grid, tol):
            if all(abs(profile.derivative(r, i)) <= 1e-9 * scale * 10.0 ** (i - 1)
                   for i in range(1, j)):
                if all(_periodic_distance(r, q) > 1e-7 for q in found):
                    found.append(r)
    return sorted(found)


def _taylor_ratios(profile: ShearProfile, y0: float, n: int, eta: float):
    z = y0 + np.linspace(-eta, eta, BALL_GRID)
    dist = np.abs(z - y0)
    keep = dist > 1e-9 * eta
    z, dist = z[keep], dist[keep]
    if eta < 1e-6 or z.size == 0:
        raise CriticalPointError(f"zeros of u' cluster near y={y0:.12g}; profile is too flat there")
    r1 = np.abs(profile.derivative(z, 1)) / dist**n
    r2 = np.abs(profile.derivative(z, 2)) / dist ** (n - 1)
    return r1, r2


def _certify_ball(profile: ShearProfile, y0: float, n: int, eta0: float):
    lead = abs(profile.derivative(y0, n + 1))
    c1 = lead / (2.0 * math.factorial(n))
    c3_floor = lead / (2.0 * math.factorial(n - 1))
    eta = eta0
    for _ in range(60):
        r1, r2 = _taylor_ratios(profile, y0, n, eta)
        if r1.min() >= c1 and r2.min() >= c3_floor:
            c2 = float(r1.max()) * (1 + 1e-6)
            c3 = float(r2.min()) * (1 - 1e-6)
            c4 = float(r2.max()) * (1 + 1e-6)
            return eta, (c1, c2, c3, c4)
        eta *= 0.5
    raise CriticalPointError(f"could not certify a Taylor ball around y={y0:.12g}")


def critical_points(profile, tol: float = ROOT_TOL, cap: int = DERIVATIVE_CAP) -> list[CriticalPoint]:
    """All zeros of u' in [0, 2pi), with order, certified radius and Taylor constants."""
    if not profile.periodic:
        # linear shear: u' never vanishes
        return []
    if tol <= 0:
        raise ValueError("tol must be positive")
    zeros = _locate_zeros(profile, tol, cap)
    points = []
    for y0 in zeros:
        n = _order_at(profile, y0, cap)
        others = [_periodic_distance(y0, q) for q in zeros if q != y0]
        eta0 = 0.5 * min(others) if others else math.pi / 2
        eta, consts = _certify_ball(profile, y0, n, eta0)
        points.append(CriticalPoint(y0, n, eta, consts))
    return points


def max_order(profile) -> int:
    """n0: the largest critical-point order (0 when u' never vanishes)."""
    return max((cp.order for cp in critical_points(profile)), default=0)


PRESETS = {
    "sin": ("u = sin y; simple critical points at pi/2, 3pi/2",
            lambda: ShearProfile((0.0,), (1.0,), name="sin")),
    "cos": ("u = cos y; simple critical points at 0 and pi",
            lambda: ShearProfile((1.0,), (0.0,), name="cos")),
    "sin3": ("u = (3 sin y - sin 3y)/4 = sin^3 y; order-2 points at 0, pi",
             lambda: ShearProfile((0.0, 0.0, 0.0), (0.75, 0.0, -0.25), name="sin3")),
    "linear": ("u = y (Couette, u' = 1); debug only, no critical points",
               lambda: LinearShear(1.0, name="linear")),
}


def preset(name: str):
    try:
        return PRESETS[name][1]()
    except KeyError:
        raise ProfileError(f"unknown profile preset {name!r}; known: {sorted(PRESETS)}") from None
