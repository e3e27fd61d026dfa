import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oylab.specfun import (
    DomainError,
    free_energy,
    psi,
    shape_bounds_check,
    shape_constants,
    shape_hessian,
    solve_theta,
)

# High-precision reference values (mpmath, 30 digits).
THETA_STAR = 1.42625512021507899
MU = 1.46105432642945454
A_SLOPE = -1.39145591400070344
TRANSVERSE_CURVATURE = 2.12098703904515620  # -2 / psi_2(theta*)

mpmath.mp.dps = 40


def _reference(k, x):
    return float(mpmath.loggamma(x) if k == -1 else mpmath.polygamma(k, x))


@pytest.mark.parametrize(
    "k, expected",
    [
        (1, math.pi**2 / 6),
        (0, -0.57721566490153286),
        (-1, 0.0),
        (2, -2 * 1.2020569031595943),
    ],
)
def test_classical_values_at_one(k, expected):
    assert psi(k, 1.0) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("k", [-1, 0, 1, 2])
def test_polygamma_against_mpmath(k):
    for x in np.geomspace(0.05, 50.0, 300):
        ref = _reference(k, x)
        assert abs(psi(k, x) - ref) <= 1e-12 * max(1.0, abs(ref)), (k, x)


def test_vectorised_matches_scalar():
    xs = np.array([0.07, 0.9, 3.3, 12.0, 48.0])
    for k in (-1, 0, 1, 2):
        vec = psi(k, xs)
        assert np.array_equal(vec, np.array([psi(k, x) for x in xs]))


def test_domain_and_order_errors():
    with pytest.raises(DomainError):
        psi(0, 0.0)
    with pytest.raises(DomainError):
        psi(1, -2.0)
    with pytest.raises(NotImplementedError):
        psi(3, 1.0)
    with pytest.raises(DomainError):
        solve_theta(0.0)
    with pytest.raises(DomainError):
        solve_theta(-1.0)


def test_solve_theta_examples():
    assert solve_theta(math.pi**2 / 6) == pytest.approx(1.0, abs=1e-12)
    assert solve_theta(0.490357756100234865) == pytest.approx(2.5, abs=1e-12)
    assert solve_theta(1.0) == pytest.approx(THETA_STAR, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 20.0))
def test_solve_theta_inverts_trigamma(theta):
    assert solve_theta(psi(1, theta)) == pytest.approx(theta, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1e4))
def test_solve_theta_residual(ratio):
    theta = solve_theta(ratio)
    assert abs(psi(1, theta) - ratio) <= 1e-12 * max(1.0, ratio)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_trigamma_strictly_decreasing(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    assert psi(1, lo) > psi(1, hi)


def test_free_energy_values():
    n = 5.0
    gamma = 0.57721566490153286
    assert free_energy(n * math.pi**2 / 6, n, 1.0) == pytest.approx(n * (math.pi**2 / 6 + gamma), abs=1e-12)
    assert free_energy(math.pi**2 / 6 * n, n) == pytest.approx(n * (math.pi**2 / 6 + gamma), abs=1e-10)
    assert free_energy(psi(1, THETA_STAR), 1.0) == pytest.approx(MU, abs=1e-12)
    assert free_energy(2 * psi(1, THETA_STAR), 2.0) == pytest.approx(2 * MU, abs=1e-12)


@pytest.mark.parametrize("kappa", [0.5, 2.0, 7.0])
@pytest.mark.parametrize("t, n", [(1.0, 1.0), (3.0, 5.0), (7.5, 2.0)])
def test_free_energy_homogeneous(kappa, t, n):
    assert free_energy(kappa * t, kappa * n) == pytest.approx(kappa * free_energy(t, n), abs=1e-10)


def test_shape_constants():
    c = shape_constants()
    assert c.theta_star == pytest.approx(THETA_STAR, abs=1e-12)
    assert c.mu == pytest.approx(MU, abs=1e-12)
    assert c.a_slope == pytest.approx(A_SLOPE, abs=1e-12)
    assert c.mu > 0
    assert c.mu == pytest.approx(c.theta_star - psi(0, c.theta_star), abs=1e-15)


def test_limit_shape_concave_at_diagonal():
    c = shape_constants()
    h = 0.01
    second = free_energy(1 - h, 1 + h) - 2 * free_energy(1.0, 1.0) + free_energy(1 + h, 1 - h)
    assert second < 0
    # first-order expansion residual vanishes at w = 0
    assert free_energy(1.0, 1.0) - c.mu == pytest.approx(0.0, abs=1e-14)


def test_shape_bounds():
    c_hat, C_hat = shape_bounds_check([0.5, -0.5])
    assert 0 < c_hat <= C_hat < np.inf
    c_hat, C_hat = shape_bounds_check([1e-4, -1e-4])
    assert c_hat == pytest.approx(TRANSVERSE_CURVATURE, rel=1e-3)
    assert C_hat == pytest.approx(TRANSVERSE_CURVATURE, rel=1e-3)
    with pytest.raises(DomainError):
        shape_bounds_check([0.0, 0.5])
    with pytest.raises(DomainError):
        shape_bounds_check([0.96])


def _fd_hessian(x, y, h=1e-4):
    f = lambda a, b: free_energy(a, b)
    fxx = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / h**2
    fyy = (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / h**2
    fxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h * h)
    return np.array([[fxx, fxy], [fxy, fyy]])


@pytest.mark.parametrize("x, y", [(1.0, 1.0), (0.4, 2.0), (3.0, 0.7), (4.5, 4.9)])
def test_hessian_closed_form(x, y):
    exact = shape_hessian(x, y)
    approx = _fd_hessian(x, y)
    assert np.allclose(approx, exact, rtol=1e-4, atol=0)


def test_transverse_curvature_negative_on_grid():
    v = np.array([1.0, -1.0])
    for x in np.linspace(0.2, 5.0, 9):
        for y in np.linspace(0.2, 5.0, 9):
            assert v @ shape_hessian(x, y) @ v < 0
