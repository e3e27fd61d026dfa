"""Polygamma functions and the limit shape of the O'Connell-Yor polymer.

The polygammas are evaluated with the usual recipe: shift the argument up
with the recurrence until it is at least 10, then sum the Bernoulli
asymptotic series.  Everything is vectorised over numpy arrays but scalar
inputs give plain floats back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# B_2, B_4, ..., B_20
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)
_SHIFT_TO = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _asymptotic(k: int, x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    inv2 = inv * inv
    if k == -1:
        out = (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI
        p = inv
        for j, b in enumerate(_BERNOULLI, start=1):
            out = out + b / (2 * j * (2 * j - 1)) * p
            p = p * inv2
        return out
    if k == 0:
        out = np.log(x) - 0.5 * inv
        p = inv2
        for j, b in enumerate(_BERNOULLI, start=1):
            out = out - b / (2 * j) * p
            p = p * inv2
        return out
    if k == 1:
        out = inv + 0.5 * inv2
        p = inv2 * inv
        for b in _BERNOULLI:
            out = out + b * p
            p = p * inv2
        return out
    # k == 2
    out = -inv2 - inv2 * inv
    p = inv2 * inv2
    for j, b in enumerate(_BERNOULLI, start=1):
        out = out - (2 * j + 1) * b * p
        p = p * inv2
    return out


def psi(k: int, theta):
    """Polygamma function psi_k(theta) for k in {-1, 0, 1, 2}.

    psi_{-1} is log Gamma, psi_0 the digamma function, and psi_k the k-th
    derivative of the digamma function.
    """
    if k not in (-1, 0, 1, 2):
        raise NotImplementedError(f"polygamma order {k} is not supported")
    x = np.asarray(theta, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("polygamma argument must be positive")
    x = x.copy()
    acc = np.zeros_like(x)
    # log Gamma is shifted multiplicatively to keep a single log at the end
    prod = np.ones_like(x)
    while True:
        low = x < _SHIFT_TO
        if not np.any(low):
            break
        xs = np.where(low, x, 1.0)
        if k == -1:
            prod = np.where(low, prod * xs, prod)
        elif k == 0:
            acc = acc - np.where(low, 1.0 / xs, 0.0)
        elif k == 1:
            acc = acc + np.where(low, 1.0 / (xs * xs), 0.0)
        else:
            acc = acc - np.where(low, 2.0 / (xs * xs * xs), 0.0)
        x = np.where(low, x + 1.0, x)
    if k == -1:
        acc = -np.log(prod)
    out = _asymptotic(k, x) + acc
    return float(out) if out.ndim == 0 else out


def solve_theta(ratio: float) -> float:
    """Return the unique theta > 0 with psi_1(theta) = ratio."""
    ratio = float(ratio)
    if not ratio > 0 or not math.isfinite(ratio):
        raise DomainError("ratio must be a positive finite number")
    lo, hi = 1e-6, 1e3
    # psi_1 decreases from +inf to 0; widen the bracket for extreme ratios
    while psi(1, lo) < ratio:
        lo *= 1e-3
    while psi(1, hi) > ratio:
        hi *= 1e3
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if psi(1, mid) > ratio:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * hi:
            break
    theta = 0.5 * (lo + hi)
    for _ in range(20):
        step = (psi(1, theta) - ratio) / psi(2, theta)
        new = theta - step
        if not lo <= new <= hi:
            break
        theta = new
        if abs(step) <= 4e-16 * theta:
            break
    return theta


def free_energy(t: float, n: float, theta: float | None = None) -> float:
    """Free energy t*theta - n*psi_0(theta); theta defaults to the characteristic tilt."""
    if not (t > 0 and n > 0):
        raise DomainError("t and n must be positive")
    if theta is None:
        theta = solve_theta(t / n)
    return t * theta - n * psi(0, theta)


@dataclass(frozen=True)
class ShapeParams:
    theta: float
    ratio: float
    f_value: float

    @classmethod
    def for_point(cls, t: float, n: float) -> "ShapeParams":
        theta = solve_theta(t / n)
        return cls(theta=theta, ratio=t / n, f_value=free_energy(t, n, theta))


@dataclass(frozen=True)
class ShapeConstants:
    mu: float
    a_slope: float
    theta_star: float


def _diagonal_profile(w: float) -> float:
    return free_energy(1.0 - w, 1.0 + w)


def shape_constants() -> ShapeConstants:
    """mu = f_{1,1} and the anti-diagonal slope of w -> f_{1-w,1+w} at w = 0."""
    theta = solve_theta(1.0)
    d0 = psi(0, theta)
    mu = theta - d0
    a_slope = -(theta + d0)
    h = 1e-5
    fd = (_diagonal_profile(h) - _diagonal_profile(-h)) / (2 * h)
    if abs(fd - a_slope) > 1e-6:
        raise ArithmeticError(f"slope check failed: analytic {a_slope}, difference quotient {fd}")
    return ShapeConstants(mu=mu, a_slope=a_slope, theta_star=theta)


def shape_hessian(x: float, y: float) -> np.ndarray:
    """Hessian of (x, y) -> f_{x,y} in closed form."""
    theta = solve_theta(x / y)
    scale = 1.0 / (y**3 * psi(2, theta))
    return scale * np.array([[y * y, -x * y], [-x * y, x * x]])


def shape_bounds_check(w_grid) -> tuple[float, float]:
    """Extremes of -(f_{1-w,1+w} - mu - a*w)/w^2 over the grid."""
    w = np.asarray(list(w_grid), dtype=float)
    if w.size == 0 or np.any(w == 0) or np.any(np.abs(w) >= 0.95):
        raise DomainError("w values must be nonzero and inside (-0.95, 0.95)")
    c = shape_constants()
    ratios = np.array([-(_diagonal_profile(v) - c.mu - c.a_slope * v) / (v * v) for v in w])
    return float(ratios.min()), float(ratios.max())
