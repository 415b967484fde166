import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from shearlab.profiles import LinearShear, ShearProfile, preset
from shearlab.spectral import (
    ModeProblem,
    PropagatorOverflow,
    build_generator,
    decay_time,
    evolve_mode,
    norm_curve,
    propagate,
    second_derivative_matrix,
    semigroup_norm,
    solve_fourier_datum,
    trig_interpolate,
)
from shearlab.stochastic import FourierDatum

SIN = preset("sin")


def test_second_derivative_symbol():
    n = 16
    d2 = second_derivative_matrix(n)
    y = 2 * np.pi * np.arange(n) / n
    for eta in (0, 1, 3, 7):
        assert np.allclose(d2 @ np.cos(eta * y), -eta**2 * np.cos(eta * y), atol=1e-10)
    assert np.allclose(d2, d2.T)


def test_propagator_identity_and_contraction():
    prob = ModeProblem(1, 1e-2, 32, SIN)
    gen = build_generator(prob)
    assert np.array_equal(propagate(gen, 0.0).matrix, np.eye(32))
    norms = [v for _, v in norm_curve(prob, [0.0, 0.5, 1.0, 4.0, 16.0])]
    assert norms[0] == pytest.approx(1.0)
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_semigroup_property():
    prob = ModeProblem(2, 1e-2, 32, SIN)
    gen = build_generator(prob)
    a = propagate(gen, 1.3).matrix @ propagate(gen, 0.7).matrix
    assert np.allclose(a, propagate(gen, 2.0).matrix, atol=1e-10)


def test_matches_independent_time_integrator():
    # oracle: adaptive Runge-Kutta on the same collocation ODE
    prob = ModeProblem(1, 5e-2, 32, SIN)
    gen = build_generator(prob)
    f0 = np.exp(1j * 2 * prob.grid).astype(complex)
    sol = solve_ivp(lambda t, v: gen @ v, (0, 3.0), f0, rtol=1e-11, atol=1e-13, method="DOP853")
    assert np.allclose(evolve_mode(prob, f0, 3.0), sol.y[:, -1], atol=1e-8)


def test_pure_diffusion_norm_when_profile_is_tiny():
    # u ~ 0 leaves only the heat flow; norm = 1 on the eta = 0 mode
    prob = ModeProblem(1, 0.5, 16, ShearProfile((1e-300,), (0.0,)))
    assert semigroup_norm(propagate(build_generator(prob), 2.0)) == pytest.approx(1.0, abs=1e-12)


def test_decay_time_threshold_one_and_reached_flags():
    prob = ModeProblem(1, 2.0**-8, 128, SIN)
    assert decay_time(prob, 1.0) == 0.0
    assert decay_time(ModeProblem(1, 1.0, 16, SIN), 0.5, t_cap=1e-3) is None


def test_decay_time_frozen_value():
    # derived with the same solver at n_y = 256 (grid-converged to the bisection tolerance)
    t_star = decay_time(ModeProblem(1, 2.0**-8, 128, SIN), 0.5)
    assert t_star == pytest.approx(40.25, rel=2e-3)
    prob = ModeProblem(1, 2.0**-8, 128, SIN)
    norm = semigroup_norm(propagate(build_generator(prob), t_star))
    assert norm <= 0.5


def test_mode_problem_validation():
    with pytest.raises(ValueError):
        ModeProblem(0, 1e-2, 32, SIN)
    with pytest.raises(ValueError):
        ModeProblem(1, 0.0, 32, SIN)
    with pytest.raises(ValueError):
        ModeProblem(1, 1e-2, 48, SIN)
    with pytest.raises(ValueError):
        ModeProblem(1, 1e-2, 32, LinearShear())
    with pytest.raises(ValueError):
        ModeProblem(1, 1e-2, 8, ShearProfile((0, 0, 1.0), (0, 0, 0)))


def test_overflow_guard():
    prob = ModeProblem(1, 1.0, 16, SIN)
    with pytest.raises(PropagatorOverflow):
        propagate(build_generator(prob), 1e13)


def test_trig_interpolate_exact_for_band_limited():
    n = 16
    y = 2 * np.pi * np.arange(n) / n
    vals = np.cos(3 * y) + 0.5 * np.sin(5 * y)
    pts = np.array([0.1, 1.7, 4.4])
    assert np.allclose(trig_interpolate(vals, pts), np.cos(3 * pts) + 0.5 * np.sin(5 * pts), atol=1e-12)


def test_solve_fourier_datum_transport_limit():
    # for short times the solution is cos(x - u(y) t) up to O(nu t) diffusion
    datum = FourierDatum.cos_x()
    x = np.array([0.3, 1.1])
    y = np.array([0.7, 2.5])
    t, nu = 0.5, 1e-8
    val = solve_fourier_datum(SIN, datum, t, nu, x, y).real
    assert np.allclose(val, np.cos(x - np.sin(y) * t), atol=1e-6)


def test_solve_fourier_datum_is_real():
    datum = FourierDatum([(1, 1, 0.3 + 0.2j), (-1, -1, 0.3 - 0.2j), (2, 0, 0.1), (-2, 0, 0.1)])
    val = solve_fourier_datum(SIN, datum, 1.0, 1e-2, np.array([0.4]), np.array([1.3]))
    assert abs(val.imag[0]) < 1e-12
