"""Power-law fits, exponent verification, Gevrey fits and the bound cross-check."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

SOLVER_FLOOR = 1e-14


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _split_log(values: np.ndarray):
    """log v = e*ln2 + log(mantissa), with the integer part kept exact."""
    mant, expo = np.frexp(values)
    return expo.astype(np.int64), np.log(mant)


def _centered_log(values: np.ndarray) -> np.ndarray:
    # centring the binary exponent in integer arithmetic makes the centred
    # logs (and hence the slope) invariant under scaling by powers of two
    expo, frac = _split_log(values)
    n = values.size
    centred_expo = (n * expo - expo.sum()) / n
    rel = frac - frac[0]  # exactly zero for repeated values
    return centred_expo * math.log(2.0) + (rel - rel.mean())


def _ols(xc: np.ndarray, yc: np.ndarray, x_mean: float, y_mean: float) -> FitResult:
    n = xc.size
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise FitError("all x values coincide")
    slope = float(np.dot(xc, yc)) / sxx
    resid = yc - slope * xc
    ssr = float(np.dot(resid, resid))
    sst = float(np.dot(yc, yc))
    stderr = math.sqrt(ssr / (n - 2) / sxx) if n > 2 else 0.0
    r2 = 1.0 if sst == 0.0 else min(1.0, max(0.0, 1.0 - ssr / sst))
    return FitResult(slope, y_mean - slope * x_mean, stderr, r2, n)


def fit_power_law(points: Iterable[Sequence[float]]) -> FitResult:
    """OLS of log y on log x."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise FitError("need at least 3 points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(pts)):
        raise FitError("power-law fit needs finite positive values")
    return _ols(_centered_log(x), _centered_log(y), float(np.log(x).mean()), float(np.log(y).mean()))


def fit_line(x: Sequence[float], y: Sequence[float]) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise FitError("need at least 3 points")
    return _ols(x - x.mean(), y - y.mean(), float(x.mean()), float(y.mean()))


def exponent_targets(n0: int) -> tuple[float, float]:
    """(nu-slope, k-slope) of t* ~ nu^-(n0+1)/(n0+3) k^-2/(n0+3)."""
    return -(n0 + 1) / (n0 + 3), -2.0 / (n0 + 3)


@dataclass(frozen=True)
class DecayRecord:
    profile_name: str
    k: int
    nu: float
    n_y: int
    theta: float
    t_star: Optional[float]

    @property
    def reached(self) -> bool:
        return self.t_star is not None


@dataclass
class ExponentReport:
    n0: int
    targets: dict
    fits: dict
    tolerances: dict
    passed: bool
    excluded: list = field(default_factory=list)
    k_ref: Optional[int] = None
    nu_ref: Optional[float] = None

    def to_dict(self, experiment: str = "decay-scan") -> dict:
        return {
            "experiment": experiment,
            "n0": self.n0,
            "targets": self.targets,
            "fits": {name: fit.to_dict() for name, fit in self.fits.items()},
            "pass": self.passed,
            "tolerances": self.tolerances,
            "k_ref": self.k_ref,
            "nu_ref": self.nu_ref,
            "excluded_points": self.excluded,
        }


def _largest_group(records, key, spread):
    groups: dict = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)
    best = max(groups.items(), key=lambda kv: (len({spread(r) for r in kv[1]}), -kv[0]), default=None)
    return best


def exponent_report(scan: Sequence[DecayRecord], n0: int, tolerance: float = 0.1,
                    nu_tilde: float = 0.01, min_points: int = 4,
                    nu_scan: Optional[Sequence[DecayRecord]] = None,
                    k_scan: Optional[Sequence[DecayRecord]] = None) -> ExponentReport:
    """Fit log t* against log nu (fixed k) and log k (fixed nu), compare to targets.

    Cap hits and points with nu/k above nu_tilde are dropped, not fitted.
    By default the largest fixed-k and fixed-nu groups of scan are used;
    nu_scan / k_scan pin the two fits to explicit record lists instead.
    """
    def ok(r):
        return r.reached and r.t_star > 0 and r.nu / r.k <= nu_tilde

    usable = [r for r in scan if ok(r)]
    excluded = [(r.k, r.nu) for r in scan if not ok(r)]
    if nu_scan is not None:
        nu_group = _largest_group([r for r in nu_scan if ok(r)], lambda r: r.k, lambda r: r.nu)
    else:
        nu_group = _largest_group(usable, lambda r: r.k, lambda r: r.nu)
    if k_scan is not None:
        k_group = _largest_group([r for r in k_scan if ok(r)], lambda r: r.nu, lambda r: r.k)
    else:
        k_group = _largest_group(usable, lambda r: r.nu, lambda r: r.k)
    if (nu_group is None or len({r.nu for r in nu_group[1]}) < min_points
            or k_group is None or len({r.k for r in k_group[1]}) < min_points):
        raise FitError(f"insufficient grid: need >= {min_points} reached nu values at fixed k "
                       f"and >= {min_points} k values at fixed nu")
    nu_fit = fit_power_law([(r.nu, r.t_star) for r in nu_group[1]])
    k_fit = fit_power_law([(r.k, r.t_star) for r in k_group[1]])
    nu_target, k_target = exponent_targets(n0)
    passed = abs(nu_fit.slope - nu_target) <= tolerance and abs(k_fit.slope - k_target) <= tolerance
    return ExponentReport(
        n0, {"nu_slope": nu_target, "k_slope": k_target}, {"nu": nu_fit, "k": k_fit},
        {"slope": tolerance, "nu_tilde": nu_tilde}, passed, excluded,
        k_ref=nu_group[0], nu_ref=k_group[0])


def gevrey_fit(mode_norms: Sequence[tuple[int, float]], n0: int) -> tuple[float, FitResult]:
    """Fit log ||S(t) P_k|| = c - lambda k^(2/(n0+3)); returns (lambda, fit)."""
    rows = [(k, v) for k, v in mode_norms if v > SOLVER_FLOOR]
    if any(not (0.0 < v <= 1.0 + 1e-8) for _, v in rows):
        raise FitError("mode norms must lie in (0, 1]")
    if len(rows) < 4:
        raise FitError("fewer than 4 modes above the solver floor")
    ks = np.array([k for k, _ in rows], dtype=float)
    fit = fit_line(-ks ** (2.0 / (n0 + 3)), np.log([v for _, v in rows]))
    return fit.slope, fit


@dataclass(frozen=True)
class CrossCheck:
    passed: bool
    vacuous: bool
    bound: float
    spectral_norm: float


def bound_crosscheck(spectral_norm: float, skorokhod_total: float, k: int, rel_stderr: float = 0.0,
                     spectral_params: Optional[tuple] = None,
                     skorokhod_params: Optional[tuple] = None) -> CrossCheck:
    """Is ||S(t) P_k|| <= k^-1 sqrt(E(delta Psi)^2) (1 + 3 rel_stderr)?

    A bound above 1 says nothing about a contraction and is flagged vacuous.
    """
    if spectral_params is not None and skorokhod_params is not None:
        if tuple(spectral_params) != tuple(skorokhod_params):
            raise ValueError(f"mismatched parameters: {spectral_params} vs {skorokhod_params}")
    if skorokhod_total < 0:
        raise ValueError("E(delta Psi)^2 must be non-negative")
    bound = math.sqrt(skorokhod_total) / k * (1.0 + 3.0 * rel_stderr)
    return CrossCheck(spectral_norm <= bound, bound >= 1.0, bound, spectral_norm)
