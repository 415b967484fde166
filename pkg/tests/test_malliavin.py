import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shearlab import malliavin as M
from shearlab.malliavin import (
    DegenerateSampleError,
    check_interpolation,
    g_double_integral,
    g_function,
    inverse_moment,
    kernel_envelope,
    kernel_trace,
    malliavin_det,
    malliavin_kernel,
    malliavin_sample,
    skorokhod_integrand,
    skorokhod_scan,
    skorokhod_variance,
    y_weight,
)
from shearlab.profiles import LinearShear, preset
from shearlab.stochastic import BrownianPath, sample_path

COS = preset("cos")


def _path(seed=7, index=3, t=4.0, n=256):
    return sample_path(seed, index, t / n, n)


def test_couette_closed_forms():
    c, nu, t, n = 2.0, 1e-2, 3.0, 2**12
    path = _path(1, 0, t, n)
    s = malliavin_sample(LinearShear(c), 0.2, nu, t, path, with_kernel=True)
    r = path.times
    assert np.allclose(s.g, c * (t / 2 - r), rtol=0, atol=1e-12 * c * t)
    assert s.detM == pytest.approx(c**2 * t**3 / 12, rel=1e-6)
    assert nu * np.dot(M.trapezoid_weights(n, path.dt), s.Y * s.g) == pytest.approx(1.0, rel=1e-12)
    assert np.all(s.kernel == 0.0)
    est = skorokhod_variance([s], with_kernel=True)
    assert est.term1 == pytest.approx(12 / (nu * c**2 * t**3), rel=1e-6)
    assert est.term2 == 0.0


def test_fubini_matches_double_integral():
    path = _path()
    a = g_function(COS, 0.3, 1e-2, path, 4.0)
    b = g_double_integral(COS, 0.3, 1e-2, path, 4.0)
    assert np.allclose(a, b, atol=1e-12)


def test_sample_invariants():
    path = _path()
    s = malliavin_sample(COS, 0.3, 1e-2, 4.0, path)
    w = M.trapezoid_weights(path.n_steps, path.dt)
    assert abs(np.dot(w, s.g)) < 1e-12
    assert s.detM > 0
    assert np.dot(w, np.abs(s.g)) ** 2 <= 4.0 * s.detM
    psi = skorokhod_integrand(s.g, s.detM, 1e-2)
    assert np.dot(w, psi**2) == pytest.approx(1 / (1e-2 * s.detM), rel=1e-12)


def test_zero_path_degenerate_at_critical_point():
    # B = 0 at the critical point y = 0 of cos: u' = 0 on the whole path, g = 0
    path = BrownianPath(0.01, 100, np.zeros(101), 0, -1, debug=True)
    g = g_function(COS, 0.0, 1e-2, path, 1.0)
    assert np.all(g == 0.0)
    with pytest.raises(DegenerateSampleError):
        y_weight(g, malliavin_det(g, 0.01), 1e-2)


def test_detM_sign_flip_symmetry():
    # u' odd about y = 0 for cos, so g and detM are invariant under B -> -B
    path = _path()
    flipped = BrownianPath(path.dt, path.n_steps, -path.values, 0, 0)
    a = malliavin_det(g_function(COS, 0.0, 1e-2, path, 4.0), path.dt)
    b = malliavin_det(g_function(COS, 0.0, 1e-2, flipped, 4.0), path.dt)
    assert a == pytest.approx(b, rel=1e-12)


def _psi(profile, y, nu, t, path, values):
    p = BrownianPath(path.dt, path.n_steps, values, 0, 0)
    g = g_function(profile, y, nu, p, t)
    return skorokhod_integrand(g, malliavin_det(g, path.dt), nu)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kernel_cameron_martin(seed):
    t, n, nu, y = 5.0, 256, 1e-2, 0.3
    path = _path(seed, 0, t, n)
    s = malliavin_sample(COS, y, nu, t, path, with_kernel=True)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        l0 = int(rng.integers(0, n - 4))
        r = int(rng.integers(0, n + 1))
        h = np.clip((path.times - l0 * path.dt) / (4 * path.dt), 0, 1)
        eps = 1e-5
        fd = (_psi(COS, y, nu, t, path, path.values + eps * h)[r]
              - _psi(COS, y, nu, t, path, path.values - eps * h)[r]) / (2 * eps)
        exact = s.kernel[l0 + 1:l0 + 5, r].mean()
        assert fd == pytest.approx(exact, rel=1e-6, abs=1e-9 * np.abs(s.kernel).max())


def test_streaming_trace_matches_dense_kernel():
    t, n, nu, y = 4.0, 128, 1e-2, 0.3
    s = malliavin_sample(COS, y, nu, t, sample_path(9, 5, t / n, n), with_kernel=True)
    blk = M._block(5, 1, COS, y, nu, t, n, 9, True)
    assert blk.trace[0] == pytest.approx(kernel_trace(s.kernel, s.dt), rel=1e-10)
    assert blk.ratio[0] == pytest.approx(s.envelope_ratio, rel=1e-10)
    env = kernel_envelope(s.g, s.detM, s.h_sup, t, s.dt)
    assert np.all(np.abs(s.kernel) <= env[None, :])


def test_skorokhod_variance_errors_and_scan():
    with pytest.raises(ValueError):
        skorokhod_variance([])
    path = _path()
    s = malliavin_sample(COS, 0.3, 1e-2, 4.0, path)
    with pytest.raises(ValueError):
        skorokhod_variance([s], with_kernel=True)
    est = skorokhod_scan(COS, 0.3, 1e-2, 4.0, 200, 5, n_steps=64)
    assert abs(est.term2) <= est.term2_envelope
    assert est.max_envelope_ratio <= 1.0


def test_inverse_moment_trivial_cases():
    assert inverse_moment(COS, 0.0, 1e-2, 1.0, 0, 10_000, 0).estimate == 1.0
    c, t = 2.0, 2.0
    res = inverse_moment(LinearShear(c), 0.0, 1e-2, t, 2, 10_000, 0, n_steps=4096)
    assert res.estimate == pytest.approx((12 / (c**2 * t**3)) ** 2, rel=1e-6)
    assert res.n_degenerate == 0
    with pytest.raises(ValueError):
        inverse_moment(COS, 0.0, 1e-2, 1.0, 1, 100, 0)
    with pytest.raises(ValueError):
        inverse_moment(COS, 0.0, 1e-2, 1.0, 3, 10_000, 0)


def test_generic_point_leading_order():
    # away from critical points E[1/detM] is close to 12 / (u'(y)^2 t^3) when nu t is small
    y, t = 1.0, 2.0
    res = inverse_moment(COS, y, 1e-4, t, 1, 10_000, 3, n_steps=64)
    lead = 12 / (math.sin(y) ** 2 * t**3)
    assert lead / 4 <= res.estimate <= 4 * lead


def test_interpolation_examples():
    x = np.linspace(0, 1, 101)
    assert check_interpolation(x, np.zeros_like(x), np.zeros_like(x), 0.5)
    assert check_interpolation(x, x**2, 2 * x, 1.0)
    with pytest.raises(ValueError):
        check_interpolation(x, x, x, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=10),
       st.sampled_from([0.25, 0.5, 1.0]))
def test_interpolation_holds_for_trig_polynomials(coeffs, alpha):
    x = np.linspace(0, 1, 201)
    m = np.arange(1, len(coeffs) + 1)
    c = np.asarray(coeffs)
    f = (c[:, None] * np.sin(2 * np.pi * m[:, None] * x)).sum(0)
    df = (c[:, None] * 2 * np.pi * m[:, None] * np.cos(2 * np.pi * m[:, None] * x)).sum(0)
    assert check_interpolation(x, f, df, alpha)
