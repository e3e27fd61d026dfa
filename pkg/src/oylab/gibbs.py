"""Exact sampling from the quenched polymer measure and quenched path statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels
from .polymer import (
    Corridor,
    LatticePoint,
    StationarySpec,
    distance_to_line,
    forward_table,
    log_partition,
    log_partition_tf_restricted,
    stationary_entry_weights,
)


class NoPathError(ValueError):
    """The partition function vanishes, so there is no path to sample."""


@dataclass(frozen=True)
class PolymerPath:
    """Up-right path from ``start`` to ``end`` with jump times s_m < ... < s_{n-1}.

    The path is right-continuous: it sits on level k for times in
    [s_{k-1}, s_k).
    """

    start: LatticePoint
    end: LatticePoint
    jumps: tuple[float, ...]

    def __post_init__(self):
        if len(self.jumps) != self.end.level - self.start.level:
            raise ValueError("number of jumps must equal the level difference")
        prev = None
        for s in self.jumps:
            if not self.start.time <= s < self.end.time or (prev is not None and s <= prev):
                raise ValueError("jump times must increase strictly inside [start, end)")
            prev = s

    def corners(self) -> list[tuple[float, int]]:
        """Endpoints (time, level) of every horizontal stretch of the path."""
        times = (self.start.time, *self.jumps, self.end.time)
        out = []
        for r, k in enumerate(range(self.start.level, self.end.level + 1)):
            out.append((times[r], k))
            out.append((times[r + 1], k))
        return out

    def level_at(self, time: float) -> int:
        return self.start.level + int(np.searchsorted(self.jumps, time, side="right"))

    @property
    def tf(self) -> float:
        """Largest anti-diagonal distance from the straight line between the endpoints."""
        pts = np.array(self.corners())
        return float(np.max(distance_to_line(pts[:, 0], pts[:, 1], self.start, self.end)))


@dataclass(frozen=True)
class QuenchedStats:
    tf: float
    s0: float | None
    corridor_flags: tuple[bool, ...]


def quenched_stats(path: PolymerPath, corridors: Iterable[Corridor] = ()) -> QuenchedStats:
    flags = []
    pts = np.array(path.corners())
    for c in corridors:
        d = distance_to_line(pts[:, 0], pts[:, 1], c.start, c.end)
        flags.append(bool(np.all(d <= c.width + 1e-9 * max(1.0, c.width))))
    s0 = path.jumps[0] if path.jumps else None
    return QuenchedStats(path.tf, s0, tuple(flags))


class PathSampler:
    """Backward sampler for the Gibbs measure Q_{p,q} on one environment.

    The forward DP is run once; for every level the prefix log-sums of the
    jump weights are kept, so each jump time is drawn from its exact
    conditional law by inverting a cumulative sum.
    """

    def __init__(self, env, p: LatticePoint, q: LatticePoint, corridor: Corridor | None = None):
        if not p.precedes(q):
            raise NoPathError("p does not precede q")
        self.env = env
        self.p = p
        self.q = q
        table = forward_table(env, p, q.time, q.level, corridor=corridor)
        self.log_z = float(table.values[-1, -1])
        if self.log_z == -math.inf:
            raise NoPathError("partition function is zero")
        self._times = table.times
        r0 = env.spec.level_row(p.level)
        B = env.paths[r0 : r0 + table.values.shape[0], table.lo : table.hi + 1]
        prefixes = []
        for r in range(1, table.values.shape[0]):
            x = table.values[r - 1] - B[r]
            if corridor is not None:
                d = distance_to_line(self._times, p.level + r, corridor.start, corridor.end)
                x = np.where(d <= corridor.width + 1e-9 * max(1.0, corridor.width), x, -np.inf)
            prefixes.append(_kernels.prefix_lse(x))
        self._prefix = prefixes

    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Grid indices (relative to p.time) of the jumps, shape (size, levels)."""
        n_jumps = len(self._prefix)
        out = np.empty((size, n_jumps), dtype=np.int64)
        v = np.full(size, len(self._times) - 1, dtype=np.int64)
        for r in range(n_jumps - 1, -1, -1):
            c = self._prefix[r]
            u = 1.0 - rng.random(size)
            target = c[v] + np.log(u)
            idx = np.searchsorted(c, target, side="left") - 1
            out[:, r] = idx
            v = idx
        return out

    def sample_jumps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self._times[self.sample_indices(rng, size)]

    def sample(self, rng: np.random.Generator) -> PolymerPath:
        jumps = self.sample_jumps(rng, 1)[0]
        return PolymerPath(self.p, self.q, tuple(float(s) for s in jumps))


def sample_path(env, p: LatticePoint, q: LatticePoint, rng_stream: np.random.Generator) -> PolymerPath:
    """One path from the discretised Gibbs measure Q_{p,q}."""
    return PathSampler(env, p, q).sample(rng_stream)


class TFTail(NamedTuple):
    b: float
    log_prob: float
    cancelled: bool


def quenched_tf_tail(env, p: LatticePoint, q: LatticePoint, b_list) -> list[TFTail]:
    """log Q_{p,q}[TF > b h^(2/3)] for each b, h the height difference of p and q."""
    log_z = log_partition(env, p, q)
    if log_z == -math.inf:
        raise NoPathError("partition function is zero")
    out = []
    for b in b_list:
        r = log_partition_tf_restricted(env, p, q, b)
        out.append(TFTail(float(b), min(r.value - log_z, 0.0), r.cancelled))
    return out


def first_jump_tail_probs(env, spec: StationarySpec, x_list, side: str = "upper") -> np.ndarray:
    """Quenched Q[s_0 > x] (upper) or Q[s_0 < x] (lower) for each x on one environment."""
    u, w = stationary_entry_weights(env, spec)
    log_z = _kernels.prefix_lse(w)[-1]
    x = np.asarray(x_list, dtype=float)
    tol = 1e-9 * env.spec.dt
    if side == "upper":
        # suffix sums: reverse, prefix, reverse
        suffix = _kernels.prefix_lse(w[::-1])[::-1]  # suffix[j] = LSE_{i >= j}
        start = np.searchsorted(u, x + tol, side="left")  # first u > x
        logs = suffix[start]
    elif side == "lower":
        prefix = _kernels.prefix_lse(w)
        stop = np.searchsorted(u, x - tol, side="left")  # u < x
        logs = prefix[stop]
    else:
        raise ValueError("side must be 'upper' or 'lower'")
    return np.exp(np.minimum(logs - log_z, 0.0))


def stationary_first_jump_tail(
    env_batch, theta: float, t: float, n: int, x_list, side: str = "upper", truncation=None
) -> list[tuple[float, float, float]]:
    """Monte Carlo estimate of E[Q^theta_{t,n}[s_0 > x]] (or s_0 < x) with standard errors."""
    spec = StationarySpec(theta, theta, t, n, truncation)
    rows = np.array([first_jump_tail_probs(env, spec, x_list, side) for env in env_batch])
    return summarise_columns(x_list, rows)


def summarise_columns(x_list, rows: np.ndarray) -> list[tuple[float, float, float]]:
    n = rows.shape[0]
    out = []
    for j, x in enumerate(x_list):
        col = rows[:, j]
        mean = math.fsum(col) / n
        var = math.fsum((col - mean) ** 2) / (n - 1) if n > 1 else math.nan
        out.append((float(x), mean, math.sqrt(var / n)))
    return out
