"""Engine runners: each turns a validated config into CSV rows and a summary."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .analysis import (
    DecayRecord,
    bound_crosscheck,
    exponent_report,
    fit_power_law,
    gevrey_fit,
)
from .config import ConfigError, ExperimentConfig, datum_from_rows, parse_config
from .malliavin import inverse_moment, skorokhod_scan
from .profiles import PRESETS, critical_points, max_order, preset
from .spectral import ModeProblem, decay_time, norm_curve, solve_fourier_datum
from .stochastic import feynman_kac

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_TOLERANCE = 0, 1, 2, 3

DECAY_COLUMNS = ["profile_name", "k", "nu", "n_y", "theta", "t_star", "reached"]
CURVE_COLUMNS = ["profile_name", "k", "nu", "t", "norm"]
MOMENT_COLUMNS = ["profile", "y", "nu", "t", "p", "n_samples", "estimate", "ci_lo", "ci_hi", "tail_frac"]
SKOROKHOD_COLUMNS = ["profile", "y", "nu", "t", "term1", "term2", "stderr1", "stderr2"]
FK_COLUMNS = ["profile", "x", "y", "t", "nu", "n_samples", "estimate", "stderr", "spectral", "z_score"]
CROSS_COLUMNS = ["profile", "k", "nu", "t", "spectral_norm", "sup_y", "sup_total", "bound", "vacuous", "passed"]

DEFAULT_STEPS = {
    "mc-inverse-moment": 1024,
    "mc-skorokhod": 1024,
    "feynman-kac-check": 4096,
    "bound-crosscheck": 1024,
}
DEFAULT_SAMPLES = {
    "mc-inverse-moment": 100_000,
    "mc-skorokhod": 10_000,
    "feynman-kac-check": 100_000,
    "bound-crosscheck": 4000,
}


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)     # file name -> (columns, rows)
    summary: dict = field(default_factory=dict)
    passed: bool = True


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _pmap(func: Callable, items: list, workers: int) -> list:
    """Ordered map over independent grid points."""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _steps(cfg: ExperimentConfig) -> int:
    return cfg.n_steps or DEFAULT_STEPS[cfg.engine]


def _samples(cfg: ExperimentConfig) -> int:
    return cfg.n_samples or DEFAULT_SAMPLES[cfg.engine]


def _nan_to_none(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


class _DecayJob:
    def __init__(self, profile, n_y, theta):
        self.profile, self.n_y, self.theta = profile, n_y, theta

    def __call__(self, point):
        k, nu = point
        return decay_time(ModeProblem(k, nu, self.n_y, self.profile), self.theta)


def run_spectral_scan(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    profile = cfg.profile()
    n0 = max_order(profile)
    points = [(cfg.k_ref, nu) for nu in cfg.nu_grid] + [(k, cfg.nu_ref) for k in cfg.k_grid]
    # shared points are solved once
    points = list(dict.fromkeys(points))
    t_stars = _pmap(_DecayJob(profile, cfg.n_y, cfg.theta), points, workers)
    records = [DecayRecord(cfg.label, k, nu, cfg.n_y, cfg.theta, ts) for (k, nu), ts in zip(points, t_stars)]
    out = Outcome()
    out.tables["decay_scan.csv"] = (DECAY_COLUMNS, [
        (r.profile_name, r.k, r.nu, r.n_y, r.theta, r.t_star, r.reached) for r in records])

    if cfg.t_grid:
        rows = []
        for k, nu in points:
            times = [0.0] + [t for t in cfg.t_grid if t <= 1.0 / nu]
            for t, value in norm_curve(ModeProblem(k, nu, cfg.n_y, profile), times):
                rows.append((cfg.label, k, nu, t, value))
        out.tables["norm_curves.csv"] = (CURVE_COLUMNS, rows)

    by_point = {(r.k, r.nu): r for r in records}
    report = exponent_report(records, n0, cfg.tol("spectral_slope"), cfg.tol("nu_tilde"),
                             nu_scan=[by_point[(cfg.k_ref, nu)] for nu in cfg.nu_grid],
                             k_scan=[by_point[(k, cfg.nu_ref)] for k in cfg.k_grid])
    out.summary = report.to_dict("spectral-scan")
    out.passed = report.passed
    if cfg.resolution_check:
        fine = _pmap(_DecayJob(profile, 2 * cfg.n_y, cfg.theta), points, workers)
        worst = max((abs(a - b) / b for a, b in zip(t_stars, fine) if a and b), default=0.0)
        ok = worst <= cfg.tol("resolution_rtol")
        out.summary["resolution"] = {"n_y": cfg.n_y, "refined_n_y": 2 * cfg.n_y,
                                     "max_rel_diff": worst, "pass": ok}
        out.passed = out.passed and ok
    return out


def run_gevrey_scan(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    profile = cfg.profile()
    n0 = max_order(profile)
    nu = cfg.nu_ref
    t = cfg.t_grid[0] if cfg.t_grid else nu ** -0.5
    norms = _pmap(_GevreyJob(profile, nu, cfg.n_y, t), list(cfg.k_grid), workers)
    lam, fit = gevrey_fit(list(zip(cfg.k_grid, norms)), n0)
    out = Outcome()
    out.tables["gevrey.csv"] = (CURVE_COLUMNS, [(cfg.label, k, nu, t, v) for k, v in zip(cfg.k_grid, norms)])
    passed = fit.r_squared >= cfg.tol("gevrey_r2")
    out.summary = {
        "experiment": "gevrey-scan", "n0": n0, "targets": {"k_power": 2.0 / (n0 + 3)},
        "fits": {"log_norm_vs_k_power": fit.to_dict(), "lambda": lam},
        "pass": passed, "tolerances": {"gevrey_r2": cfg.tol("gevrey_r2")}, "t": t, "nu": nu,
    }
    out.passed = passed
    return out


class _GevreyJob:
    def __init__(self, profile, nu, n_y, t):
        self.profile, self.nu, self.n_y, self.t = profile, nu, n_y, t

    def __call__(self, k):
        return norm_curve(ModeProblem(k, self.nu, self.n_y, self.profile), [self.t])[0][1]


def local_order(profile, y: float, tol: float = 1e-9) -> int:
    """Order of the critical point at y, or 0 if u'(y) != 0."""
    for cp in critical_points(profile):
        d = abs(cp.location - y) % (2 * math.pi)
        if min(d, 2 * math.pi - d) <= tol:
            return cp.order
    return 0


def run_mc_inverse_moment(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    profile = cfg.profile()
    n_steps, n_samples = _steps(cfg), _samples(cfg)
    rows, fits, passed = [], {}, True
    t_ref = cfg.t_ref or cfg.t_grid[len(cfg.t_grid) // 2]
    for y in cfg.y_grid:
        n = local_order(profile, y)
        t_target, nu_target = -cfg.p * (n + 3), -cfg.p * n
        t_pts, nu_pts, degenerate = [], [], 0
        plan = [(cfg.nu_ref, t) for t in cfg.t_grid]
        plan += [(nu, t_ref) for nu in cfg.nu_grid if (nu, t_ref) not in plan]
        for nu, t in plan:
            res = inverse_moment(profile, y, nu, t, cfg.p, n_samples, cfg.seed, n_steps, workers, cfg.n_boot)
            degenerate += res.n_degenerate
            rows.append((cfg.label, y, nu, t, cfg.p, n_samples, res.estimate, res.ci_lo, res.ci_hi, res.tail_frac))
            if nu == cfg.nu_ref and t in cfg.t_grid:
                t_pts.append((t, res.estimate))
            if t == t_ref and nu in cfg.nu_grid:
                nu_pts.append((nu, res.estimate))
        entry = {"order": n, "targets": {"t_slope": t_target, "nu_slope": nu_target},
                 "degenerate_fraction": degenerate / (n_samples * len(plan))}
        if len(t_pts) >= 3:
            fit = fit_power_law(t_pts)
            entry["t_fit"] = fit.to_dict()
            entry["t_pass"] = abs(fit.slope - t_target) <= cfg.tol("mc_slope")
            passed &= entry["t_pass"]
        if len(nu_pts) >= 3:
            fit = fit_power_law(nu_pts)
            entry["nu_fit"] = fit.to_dict()
            entry["nu_pass"] = abs(fit.slope - nu_target) <= cfg.tol("mc_nu_slope")
            passed &= entry["nu_pass"]
        fits[repr(y)] = entry
    out = Outcome()
    out.tables["inverse_moments.csv"] = (MOMENT_COLUMNS, rows)
    out.summary = {"experiment": "mc-inverse-moment", "n0": max_order(profile),
                   "targets": {repr(y): fits[repr(y)]["targets"] for y in cfg.y_grid},
                   "fits": fits, "pass": passed,
                   "tolerances": {"mc_slope": cfg.tol("mc_slope"), "mc_nu_slope": cfg.tol("mc_nu_slope")},
                   "p": cfg.p, "n_steps": n_steps, "n_samples": n_samples, "t_ref": t_ref}
    out.passed = passed
    return out


def run_mc_skorokhod(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    profile = cfg.profile()
    n_steps, n_samples = _steps(cfg), _samples(cfg)
    rows, fits, passed = [], {}, True
    for y in cfg.y_grid:
        n = local_order(profile, y)
        pts, worst, env_ok = [], 0.0, True
        for t in cfg.t_grid:
            est = skorokhod_scan(profile, y, cfg.nu_ref, t, n_samples, cfg.seed, n_steps, workers, cfg.n_boot)
            rows.append((cfg.label, y, cfg.nu_ref, t, est.term1, est.term2, est.stderr1, est.stderr2))
            pts.append((t, est.total))
            worst = max(worst, est.max_envelope_ratio)
            env_ok &= abs(est.term2) <= est.term2_envelope
        fit = fit_power_law(pts) if len(pts) >= 3 else None
        target = -(n + 3)
        entry = {"order": n, "target_t_slope": target, "max_kernel_envelope_ratio": worst,
                 "kernel_envelope_ok": worst <= 1.0, "term2_envelope_ok": env_ok}
        ok = worst <= 1.0 and env_ok
        if fit is not None:
            entry["t_fit"] = fit.to_dict()
            entry["t_pass"] = abs(fit.slope - target) <= cfg.tol("mc_slope")
            ok &= entry["t_pass"]
        entry["pass"] = ok
        passed &= ok
        fits[repr(y)] = entry
    out = Outcome()
    out.tables["skorokhod.csv"] = (SKOROKHOD_COLUMNS, rows)
    out.summary = {"experiment": "mc-skorokhod", "n0": max_order(profile),
                   "targets": {repr(y): fits[repr(y)]["target_t_slope"] for y in cfg.y_grid},
                   "fits": fits, "pass": passed, "tolerances": {"mc_slope": cfg.tol("mc_slope")},
                   "n_steps": n_steps, "n_samples": n_samples}
    out.passed = passed
    return out


def run_feynman_kac_check(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    profile = cfg.profile()
    datum = datum_from_rows(cfg.f0)
    t, nu = cfg.t_grid[0], cfg.nu_ref
    n_steps, n_samples = _steps(cfg), _samples(cfg)
    reference = solve_fourier_datum(profile, datum, t, nu, cfg.x_grid, cfg.y_grid, cfg.n_y).real
    rows, worst = [], 0.0
    for x, y, ref in zip(cfg.x_grid, cfg.y_grid, reference):
        est = feynman_kac(profile, datum, t, nu, x, y, n_samples, cfg.seed, n_steps, workers, cfg.n_boot)
        z = (est.estimate - ref) / est.stderr if est.stderr > 0 else (0.0 if est.estimate == ref else math.inf)
        worst = max(worst, abs(z))
        rows.append((cfg.label, x, y, t, nu, n_samples, est.estimate, est.stderr, float(ref), z))
    out = Outcome()
    out.tables["feynman_kac.csv"] = (FK_COLUMNS, rows)
    out.passed = worst <= cfg.tol("fk_sigma")
    out.summary = {"experiment": "feynman-kac-check", "n0": max_order(profile),
                   "targets": {"max_abs_z": cfg.tol("fk_sigma")}, "fits": {"max_abs_z": worst},
                   "pass": out.passed, "tolerances": {"fk_sigma": cfg.tol("fk_sigma")},
                   "n_steps": n_steps, "n_samples": n_samples}
    return out


def crosscheck_y_grid(profile, extra) -> list:
    ys = [cp.location for cp in critical_points(profile)] + list(extra)
    return sorted(dict.fromkeys(float(y) for y in ys))


def run_bound_crosscheck(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    profile = cfg.profile()
    n_steps, n_samples = _steps(cfg), _samples(cfg)
    k, nu = cfg.k_ref, cfg.nu_ref
    ys = crosscheck_y_grid(profile, cfg.y_grid)
    times = sorted(cfg.t_grid)
    norms = dict(norm_curve(ModeProblem(k, nu, cfg.n_y, profile), times))
    sk_rows, cross_rows, checks = [], [], {}
    passed = True
    for t in times:
        best = None
        for y in ys:
            est = skorokhod_scan(profile, y, nu, t, n_samples, cfg.seed, n_steps, workers, cfg.n_boot)
            sk_rows.append((cfg.label, y, nu, t, est.term1, est.term2, est.stderr1, est.stderr2))
            if best is None or est.total > best[1].total:
                best = (y, est)
        y_sup, est = best
        rel = est.total_stderr / est.total if est.total > 0 else 0.0
        chk = bound_crosscheck(norms[t], est.total, k, rel, (profile, k, nu, t), (profile, k, nu, t))
        cross_rows.append((cfg.label, k, nu, t, chk.spectral_norm, y_sup, est.total, chk.bound,
                           chk.vacuous, chk.passed))
        need_informative = any(abs(t - s) <= 1e-12 * t for s in cfg.nonvacuous_t)
        ok = chk.passed and not (need_informative and chk.vacuous)
        checks[repr(t)] = {"spectral_norm": chk.spectral_norm, "bound": chk.bound, "vacuous": chk.vacuous,
                           "passed": chk.passed, "nonvacuous_required": need_informative, "pass": ok,
                           "sup_y": y_sup}
        passed &= ok
    out = Outcome()
    out.tables["skorokhod.csv"] = (SKOROKHOD_COLUMNS, sk_rows)
    out.tables["crosscheck.csv"] = (CROSS_COLUMNS, cross_rows)
    out.summary = {"experiment": "bound-crosscheck", "n0": max_order(profile),
                   "targets": {"inequality": "norm <= sqrt(total)/k * (1 + 3 rel_stderr)"},
                   "fits": checks, "pass": passed, "tolerances": {"sigma": 3.0},
                   "n_steps": n_steps, "n_samples": n_samples, "y_grid": ys}
    out.passed = passed
    return out


SOLUTION_COLUMNS = ["profile", "t", "nu", "x", "y", "f"]


def run_solve(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    """Deterministic spectral solution at the configured (x, y) points and times."""
    if cfg.f0 is None or not cfg.x_grid or len(cfg.x_grid) != len(cfg.y_grid) or not cfg.t_grid:
        raise ConfigError("solve needs [initial] f0, paired x_grid/y_grid and a t_grid")
    profile = cfg.profile()
    datum = datum_from_rows(cfg.f0)
    rows = []
    for t in cfg.t_grid:
        values = solve_fourier_datum(profile, datum, t, cfg.nu_ref, cfg.x_grid, cfg.y_grid, cfg.n_y).real
        rows.extend((cfg.label, t, cfg.nu_ref, x, y, float(v)) for x, y, v in zip(cfg.x_grid, cfg.y_grid, values))
    out = Outcome()
    out.tables["solution.csv"] = (SOLUTION_COLUMNS, rows)
    out.summary = {"experiment": "solve", "n0": max_order(profile), "targets": {}, "fits": {},
                   "pass": True, "tolerances": {}}
    return out


ENGINE_RUNNERS = {
    "spectral-scan": run_spectral_scan,
    "gevrey-scan": run_gevrey_scan,
    "mc-inverse-moment": run_mc_inverse_moment,
    "mc-skorokhod": run_mc_skorokhod,
    "feynman-kac-check": run_feynman_kac_check,
    "bound-crosscheck": run_bound_crosscheck,
}


# ---------------------------------------------------------------------------
# shipped configurations and presets

def shipped_configs() -> list[str]:
    names = [p.name[:-5] for p in resources.files("shearlab.configs").iterdir() if p.name.endswith(".toml")]
    return sorted(names)


def shipped_config_text(name: str) -> str:
    path = resources.files("shearlab.configs") / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"no shipped config named {name!r}; known: {shipped_configs()}")
    return path.read_text(encoding="utf-8")


def list_presets() -> list[tuple[str, str]]:
    """(name, description) for every profile preset, in a fixed order."""
    out = []
    for name in sorted(PRESETS):
        description, _ = PRESETS[name]
        out.append((name, f"{description}; n0 = {max_order(preset(name))}"))
    return out


# ---------------------------------------------------------------------------
# orchestration

@dataclass
class RunResult:
    exit_code: int
    output_dir: Path
    summary: dict
    files: list


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _manifest(cfg: Optional[ExperimentConfig], status: str, exit_code: int, files: list,
              error: Optional[dict] = None, digest: Optional[str] = None) -> dict:
    return {
        "code_version": __version__,
        "config_hash": digest if digest else (cfg.digest() if cfg else None),
        "engine": cfg.engine if cfg else None,
        "seed": cfg.seed if cfg else None,
        "status": status,
        "exit_code": exit_code,
        "files": files,
        "error": error,
    }


def run_experiment(cfg: ExperimentConfig, workers: int = 1, output_dir=None,
                   runner: Optional[Callable] = None) -> RunResult:
    """Run one engine, write CSVs, summary.json and manifest.json under output_dir.

    runner overrides the engine's own runner (used by the solve subcommand).
    """
    out_dir = Path(output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    try:
        if runner is None and cfg.engine == "full-report":
            summary, code = _run_full_report(cfg, workers, out_dir, files)
        else:
            outcome = (runner or ENGINE_RUNNERS[cfg.engine])(cfg, workers)
            for name, (columns, rows) in outcome.tables.items():
                _write(out_dir / name, csv_text(columns, rows))
                files.append(name)
            summary = dict(outcome.summary)
            summary.setdefault("experiment", cfg.engine)
            summary["name"] = cfg.name
            code = EXIT_OK if outcome.passed else EXIT_TOLERANCE
        _write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
        files.append("summary.json")
        status = "pass" if code == EXIT_OK else "tolerance-failure"
        _write(out_dir / "manifest.json", json.dumps(_manifest(cfg, status, code, files), indent=2))
        return RunResult(code, out_dir, summary, files)
    except Exception as exc:  # any module error becomes a failure record
        record = {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
        _write(out_dir / "failure.json", json.dumps(record, indent=2))
        files.append("failure.json")
        _write(out_dir / "manifest.json",
               json.dumps(_manifest(cfg, "failure", EXIT_FAILURE, files, record), indent=2))
        log.error("experiment %s failed: %s", cfg.name, exc)
        return RunResult(EXIT_FAILURE, out_dir, {"error": record}, files)


def write_config_failure(out_dir, text: str, error: ConfigError) -> None:
    """Manifest for a config that never validated."""
    import hashlib

    out_dir = Path(out_dir)
    record = {"type": type(error).__name__, "message": str(error), "line": error.line}
    _write(out_dir / "failure.json", json.dumps(record, indent=2))
    manifest = _manifest(None, "config-error", EXIT_CONFIG, ["failure.json"], record,
                         hashlib.sha256(text.encode()).hexdigest())
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2))


def _run_full_report(cfg: ExperimentConfig, workers: int, out_dir: Path, files: list):
    results, code = {}, EXIT_OK
    for name in cfg.runs:
        sub = parse_config(shipped_config_text(name))
        res = run_experiment(sub, workers, out_dir / name)
        files.extend(f"{name}/{f}" for f in res.files + ["manifest.json"])
        results[name] = {"exit_code": res.exit_code, "pass": res.exit_code == EXIT_OK,
                         "summary": res.summary}
        if res.exit_code == EXIT_FAILURE:
            code = EXIT_FAILURE
        elif res.exit_code != EXIT_OK and code == EXIT_OK:
            code = res.exit_code
    summary = {"experiment": "full-report", "n0": None, "targets": {}, "fits": results,
               "pass": code == EXIT_OK, "tolerances": {}, "name": cfg.name}
    return summary, code


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
