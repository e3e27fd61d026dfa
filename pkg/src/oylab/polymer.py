"""Log-domain evaluation of partition functions on a discretised environment.

A path from (s, m) to (t, n) is given by jump times s_m < ... < s_{n-1}
on the grid, with s <= s_m and s_{n-1} < t, and its weight is

    dt^(n-m) * exp(sum_k B_k(s_k) - B_k(s_{k-1})),    s_{m-1} = s, s_n = t.

This is the left-endpoint Riemann sum of the continuum simplex integral.
Under this convention, splitting a path at a grid point (u, k) with
s_{k-1} < u <= s_k is a bijection, so super-additivity through grid
points holds exactly.

Log-weights are plain floats with ``-inf`` standing for a zero weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from . import _kernels
from .environment import EnvironmentGrid

NEG_INF = -math.inf
_OFF = np.zeros(5)


class CoverageError(ValueError):
    """The environment does not cover the requested window."""


class PreconditionError(ValueError):
    """Arguments violate an operation's precondition."""


@dataclass(frozen=True)
class LatticePoint:
    time: float
    level: int

    def precedes(self, other: "LatticePoint") -> bool:
        """Componentwise order p <= q."""
        return self.time <= other.time + 1e-12 and self.level <= other.level

    @property
    def height(self) -> float:
        return 0.5 * (self.time + self.level)

    @property
    def ad(self) -> float:
        return 0.5 * (self.level - self.time)


def anti_diagonal(d_time: float, d_level: float) -> float:
    """ad of a displacement vector: ad((n - m, n + m)) = m."""
    return 0.5 * (d_level - d_time)


def logsumexp(values: Iterable[float]) -> float:
    arr = np.fromiter(values, dtype=float)
    if arr.size == 0:
        return NEG_INF
    m = arr.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + math.log(math.fsum(np.exp(arr - m))))


class Restricted(NamedTuple):
    value: float
    cancelled: bool


def logsubexp(a: float, b: float, rel_tol: float = 1e-9) -> Restricted:
    """log(e^a - e^b) for b <= a; flags results lost to cancellation."""
    if b == NEG_INF:
        return Restricted(a, False)
    if b >= a:
        return Restricted(NEG_INF, b > a)
    frac = -math.expm1(b - a)
    if frac < rel_tol:
        return Restricted(NEG_INF, True)
    return Restricted(a + math.log(frac), False)


# --------------------------------------------------------------------------
# corridors and the transversal fluctuation metric


@dataclass(frozen=True)
class Corridor:
    start: LatticePoint
    end: LatticePoint
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("corridor width must be positive")
        if not self.start.precedes(self.end):
            raise PreconditionError("corridor start must precede its end")


def _line_params(p: LatticePoint, q: LatticePoint):
    dh = q.height - p.height
    slope = (q.ad - p.ad) / dh if dh > 0 else 0.0
    return p.ad, p.height, slope


def distance_to_line(time, level, p: LatticePoint, q: LatticePoint):
    """Anti-diagonal distance of (time, level) from the straight line through p and q."""
    ad0, h0, slope = _line_params(p, q)
    time = np.asarray(time, dtype=float)
    h = 0.5 * (level + time)
    out = np.abs(0.5 * (level - time) - (ad0 + slope * (h - h0)))
    return float(out) if out.ndim == 0 else out


def _corridor_array(p, q, width):
    ad0, h0, slope = _line_params(p, q)
    return np.array([1.0, ad0, h0, slope, width + 1e-9 * max(1.0, width)])


def tf_scale(p: LatticePoint, q: LatticePoint) -> float:
    """Height difference to the power 2/3, the natural unit of transversal fluctuation."""
    return max(q.height - p.height, 0.0) ** (2.0 / 3.0)


# --------------------------------------------------------------------------
# dynamic programming


def _check_point(env: EnvironmentGrid, pt: LatticePoint) -> int:
    env.spec.level_row(pt.level)
    return env.spec.index(pt.time)


@dataclass(frozen=True, eq=False)
class ForwardTable:
    """All values log Z_{p,(w,k)} for w in [p.time, t_end] and k in [p.level, level_end]."""

    env: EnvironmentGrid
    start: LatticePoint
    lo: int
    hi: int
    values: np.ndarray  # (levels, hi - lo + 1)

    def value(self, q: LatticePoint) -> float:
        k = q.level - self.start.level
        j = self.env.spec.index(q.time) - self.lo
        if k < 0 or j < 0:
            return NEG_INF
        if k >= self.values.shape[0] or j >= self.values.shape[1]:
            raise CoverageError("point outside the computed table")
        return float(self.values[k, j])

    def row(self, level: int) -> np.ndarray:
        return self.values[level - self.start.level]

    @property
    def times(self) -> np.ndarray:
        return self.env.times[self.lo : self.hi + 1]


def forward_table(
    env: EnvironmentGrid,
    p: LatticePoint,
    t_end: float,
    level_end: int,
    corridor: Corridor | None = None,
    store: bool = True,
) -> ForwardTable:
    """Run the forward DP from p over times [p.time, t_end] and levels up to level_end.

    Without ``store`` only the row of ``level_end`` is kept.
    """
    lo = _check_point(env, p)
    hi = env.spec.index(t_end)
    env.spec.level_row(level_end)
    if hi < lo or level_end < p.level:
        raise PreconditionError("empty DP window")
    r0 = env.spec.level_row(p.level)
    r1 = env.spec.level_row(level_end)
    B = env.paths[r0 : r1 + 1]
    init = B[0, lo : hi + 1] - B[0, lo]
    cor = _OFF if corridor is None else _corridor_array(corridor.start, corridor.end, corridor.width)
    vals = _kernels.forward(B, init, lo, hi, math.log(env.spec.dt), env.times, p.level, cor, store)
    return ForwardTable(env, p, lo, hi, vals)


def _final_value(env, p, q, cor) -> float:
    lo = _check_point(env, p)
    hi = _check_point(env, q)
    if not p.precedes(q) or hi < lo:
        return NEG_INF
    r0 = env.spec.level_row(p.level)
    r1 = env.spec.level_row(q.level)
    B = env.paths[r0 : r1 + 1]
    init = B[0, lo : hi + 1] - B[0, lo]
    vals = _kernels.forward(B, init, lo, hi, math.log(env.spec.dt), env.times, p.level, cor, False)
    return float(vals[0, -1])


def log_partition(env: EnvironmentGrid, p: LatticePoint, q: LatticePoint) -> float:
    """log Z_{p,q}; -inf when p <= q fails."""
    _check_point(env, p)
    _check_point(env, q)
    if not p.precedes(q):
        return NEG_INF
    if p.level == q.level:
        return bm_increment(env, p.level, p.time, q.time)
    return _final_value(env, p, q, _OFF)


def bm_increment(env: EnvironmentGrid, level: int, s: float, t: float) -> float:
    row = env.paths[env.spec.level_row(level)]
    return float(row[env.spec.index(t)] - row[env.spec.index(s)])


def log_partition_compensated(env, p: LatticePoint, q: LatticePoint, a_slope: float) -> float:
    """log Z_{p,q} + a * ad(p - q)."""
    return log_partition(env, p, q) + a_slope * anti_diagonal(p.time - q.time, p.level - q.level)


@dataclass(frozen=True)
class Segment:
    """Lattice points (l - j, l + j) for offsets j = a..b on the anti-diagonal at height l."""

    anchor_level: int
    a: int
    b: int

    def points(self) -> Iterator[LatticePoint]:
        for j in range(self.a, self.b + 1):
            yield LatticePoint(float(self.anchor_level - j), self.anchor_level + j)


def log_partition_segments(env, seg1: Segment, seg2: Segment, a_slope: float) -> float:
    """log of the sum of compensated partition functions over all pairs of segment points."""
    targets = list(seg2.points())
    for q in targets:
        _check_point(env, q)
    terms = []
    for p in seg1.points():
        _check_point(env, p)
        admissible = [q for q in targets if p.precedes(q)]
        if not admissible:
            continue
        t_end = max(q.time for q in admissible)
        l_end = max(q.level for q in admissible)
        table = forward_table(env, p, t_end, l_end)
        for q in admissible:
            comp = a_slope * anti_diagonal(p.time - q.time, p.level - q.level)
            terms.append(table.value(q) + comp)
    return logsumexp(terms)


def log_partition_constrained(env, corridor: Corridor) -> float:
    """log Z over paths whose corners all lie within ``width`` of the start-end line.

    The corners of a path are (s_{k-1}, k) and (s_k, k) on every level it
    visits; since the distance is affine along a horizontal stretch, this
    is the same as asking the whole path to stay inside the corridor.
    """
    cor = _corridor_array(corridor.start, corridor.end, corridor.width)
    return _final_value(env, corridor.start, corridor.end, cor)


def _log_partition_within(env, p, q, width) -> float:
    return _final_value(env, p, q, _corridor_array(p, q, width))


def log_partition_tf_restricted(env, p: LatticePoint, q: LatticePoint, b: float) -> Restricted:
    """log Z over paths with TF > b * h^(2/3), h the height difference of p and q."""
    if b < 0:
        raise ValueError("b must be nonnegative")
    _check_point(env, p)
    _check_point(env, q)
    if not p.precedes(q):
        raise PreconditionError("p must precede q")
    total = log_partition(env, p, q)
    inside = _log_partition_within(env, p, q, b * tf_scale(p, q))
    return logsubexp(total, inside)


def crossing_decomposition_check(
    env,
    p: LatticePoint,
    q: LatticePoint,
    cross_height: int,
    levels: Iterable[int] | None = None,
    mode: str = "exact",
) -> tuple[float, float]:
    """Compare log Z_{p,q} with its decomposition by where paths cross x + y = c.

    A path crosses either on a horizontal stretch, through the grid point
    (c - k, k), or during the jump from k to k + 1 at a time
    s in [c - k - 1, c - k).  The point terms are Z_{p,(c-k,k)} Z_{(c-k,k),q}.
    The jump terms are Z_{p,(s,k)} dt W_{k+1}(s), where W is the weight of
    paths continuing from level k + 1 whose next jump comes strictly after
    s.  That makes the decomposition exact on the grid.  ``mode="naive"``
    replaces W by Z_{(s,k+1),q}, a first-order approximation whose error
    shrinks linearly in dt.

    ``levels`` restricts the crossing levels that are summed.
    """
    if mode not in ("exact", "naive"):
        raise ValueError("mode must be 'exact' or 'naive'")
    c = cross_height
    if not p.precedes(q):
        raise PreconditionError("p must precede q")
    if not (p.time + p.level <= c <= q.time + q.level) or p.time + p.level == q.time + q.level:
        raise PreconditionError("the line does not separate p and q")
    lo = _check_point(env, p)
    hi = _check_point(env, q)
    spec = env.spec
    lhs = log_partition(env, p, q)
    log_dt = math.log(spec.dt)
    fwd = forward_table(env, p, q.time, q.level).values
    r0 = spec.level_row(p.level)
    r1 = spec.level_row(q.level)
    open_, closed = _kernels.backward(env.paths[r0 : r1 + 1], lo, hi, log_dt, hi)
    wanted = set(range(p.level, q.level + 1)) if levels is None else set(levels)
    terms = []
    for k in range(p.level, q.level + 1):
        if k not in wanted:
            continue
        r = k - p.level
        u = c - k
        if p.time <= u <= q.time:
            j = spec.index(u) - lo
            terms.append(fwd[r, j] + closed[r, j])
        if k == q.level:
            continue
        s_lo = max(c - k - 1.0, p.time)
        s_hi = min(c - k, q.time)
        if s_lo >= s_hi:
            continue
        j0 = spec.index(s_lo) - lo
        j1 = spec.index(s_hi) - lo  # exclusive
        for j in range(j0, j1):
            if lo + j >= hi:
                break
            nxt = open_[r + 1, j] if mode == "exact" else closed[r + 1, j]
            terms.append(fwd[r, j] + log_dt + nxt)
    return lhs, logsumexp(terms)


# --------------------------------------------------------------------------
# stationary two-parameter model

# default window length is TRUNCATION_SCALE / min(eta, theta); the boundary
# Brownian motion fluctuates by ~sqrt(T), so a 40-unit margin is not enough
TRUNCATION_SCALE = 80.0


@dataclass(frozen=True)
class StationarySpec:
    eta: float
    theta: float
    t: float
    n: int
    truncation: float | None = None

    def __post_init__(self):
        if not (self.eta > 0 and self.theta > 0):
            raise ValueError("eta and theta must be positive")
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.truncation is None:
            object.__setattr__(self, "truncation", TRUNCATION_SCALE / min(self.eta, self.theta))
        if not self.truncation > 0:
            raise ValueError("truncation must be positive")


def _stationary_window(env, spec: StationarySpec):
    if not env.spec.covers(-spec.truncation, spec.t, 0, spec.n):
        raise CoverageError(
            f"environment must cover times [{-spec.truncation}, {spec.t}] and levels 0..{spec.n}"
        )
    lo = env.spec.index(-spec.truncation)
    hi = env.spec.index(spec.t)
    r0 = env.spec.level_row(0)
    r1 = env.spec.level_row(spec.n)
    u = env.times[lo : hi + 1]
    B = env.paths[r0 : r1 + 1]
    boundary = B[0, lo : hi + 1] + np.where(u < 0, spec.eta * u, spec.theta * u)
    return lo, hi, B, boundary


def log_partition_stationary(env, spec: StationarySpec) -> float:
    """log Z^{(eta, theta)}_{t,n} with the entry time s_0 restricted to [-T, t)."""
    lo, hi, B, boundary = _stationary_window(env, spec)
    vals = _kernels.forward(B, boundary, lo, hi, math.log(env.spec.dt), env.times, 0, _OFF, False)
    return float(vals[0, -1])


def stationary_row(env, spec: StationarySpec) -> tuple[np.ndarray, np.ndarray]:
    """Times w in [-T, t] and log Z^{(eta,theta)}_{w,n} for every such w."""
    lo, hi, B, boundary = _stationary_window(env, spec)
    vals = _kernels.forward(B, boundary, lo, hi, math.log(env.spec.dt), env.times, 0, _OFF, False)
    return env.times[lo : hi + 1], vals[0]


def stationary_entry_weights(env, spec: StationarySpec) -> tuple[np.ndarray, np.ndarray]:
    """Times u and the log-weight of all paths whose first jump s_0 equals u.

    Computed with a backward DP from (t, n), so it is independent of the
    forward recursion; the log-sum-exp of the weights is log Z.
    """
    lo, hi, B, boundary = _stationary_window(env, spec)
    log_dt = math.log(env.spec.dt)
    open_, _ = _kernels.backward(B[1:], lo, hi, log_dt, hi)
    weights = boundary[:-1] + log_dt + open_[0, :-1]
    return env.times[lo:hi], weights


def deviation_bound_check(env, p: LatticePoint, q: LatticePoint, epsilon: float) -> float:
    """max over grid u in [0, eps] of log Z_{p,(t+u,n)} - log Z_{p,(t+eps,n)}."""
    end = q.time + epsilon
    if not env.spec.covers(p.time, end, p.level, q.level):
        raise CoverageError("grid does not cover [t, t + epsilon]")
    j_t = env.spec.index(q.time)
    j_e = env.spec.index(end)
    if q.level == p.level:
        row = env.paths[env.spec.level_row(q.level)]
        vals = row[j_t : j_e + 1] - row[env.spec.index(p.time)]
    else:
        table = forward_table(env, p, end, q.level, store=False)
        vals = table.values[0, j_t - table.lo : j_e - table.lo + 1]
    return float(np.max(vals) - vals[-1])
