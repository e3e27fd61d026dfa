"""Seedable discretised Brownian environments on a level x time grid.

Randomness comes from counter-based Philox streams.  The key is
``(seed, level)`` and the counter encodes ``(block, offset, tag)``, where
the block index is taken relative to the grid point at time 0.  A value
therefore depends only on (seed, level, absolute time step, tag), so
growing the grid in time or in levels leaves existing increments unchanged.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels

BLOCK = 1 << 16
_MASK64 = (1 << 64) - 1
_TAG_SIGNS = 1 << 32
_MAGIC = b"OYENV\x00\x01\x00"
_HEADER = struct.Struct("<8sdddqqQqq")


class GridError(ValueError):
    """Invalid grid specification."""


@dataclass(frozen=True)
class GridSpec:
    t_min: float
    t_max: float
    dt: float
    level_min: int
    level_max: int
    n_steps: int = field(init=False, repr=False, compare=False)
    anchor: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise GridError("dt must be positive")
        if not self.t_min < self.t_max:
            raise GridError("t_min must be below t_max")
        if self.level_min > self.level_max:
            raise GridError("level_min must not exceed level_max")
        span = (self.t_max - self.t_min) / self.dt
        steps = round(span)
        if abs(span - steps) > 1e-9 * max(1.0, steps):
            raise GridError("(t_max - t_min)/dt must be an integer")
        lead = -self.t_min / self.dt
        anchor = round(lead)
        if not 0 <= anchor <= steps or abs(lead - anchor) > 1e-9 * max(1.0, abs(anchor)):
            raise GridError("time 0 must be a grid point")
        object.__setattr__(self, "n_steps", int(steps))
        object.__setattr__(self, "anchor", int(anchor))

    @property
    def n_levels(self) -> int:
        return self.level_max - self.level_min + 1

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_steps + 1) - self.anchor) * self.dt

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises IndexError when ``t`` is off the grid."""
        x = t / self.dt + self.anchor
        j = round(x)
        if abs(x - j) > 1e-9 * max(1.0, abs(x)) or not 0 <= j <= self.n_steps:
            raise IndexError(f"time {t} is not a point of the grid")
        return int(j)

    def level_row(self, level: int) -> int:
        if not self.level_min <= level <= self.level_max:
            raise IndexError(f"level {level} outside [{self.level_min}, {self.level_max}]")
        return level - self.level_min

    def covers(self, t0: float, t1: float, l0: int, l1: int) -> bool:
        eps = 1e-9 * max(1.0, abs(self.t_min), abs(self.t_max))
        return (
            self.t_min - eps <= t0
            and t1 <= self.t_max + eps
            and self.level_min <= l0
            and l1 <= self.level_max
        )


@dataclass(frozen=True, eq=False)
class EnvironmentGrid:
    """Brownian increments ``increments[row, j] = B(t_{j+1}) - B(t_j)``."""

    spec: GridSpec
    increments: np.ndarray
    seed: int
    depth: int = 0

    def __post_init__(self):
        shape = (self.spec.n_levels, self.spec.n_steps)
        if self.increments.shape != shape:
            raise GridError(f"increments have shape {self.increments.shape}, expected {shape}")
        self.increments.setflags(write=False)

    @cached_property
    def paths(self) -> np.ndarray:
        """B values on the grid, one row per level, zero at time 0."""
        out = np.empty((self.spec.n_levels, self.spec.n_steps + 1))
        for r in range(self.spec.n_levels):
            _kernels.anchored_cumsum(self.increments[r], self.spec.anchor, out[r])
        out.setflags(write=False)
        return out

    @cached_property
    def times(self) -> np.ndarray:
        return self.spec.times


def replica_seed(seed: int, replica: int) -> int:
    """Independent 64-bit seed for replica ``replica`` of a run seeded by ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(int(replica),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _raw_words(seed: int, level: int, tag: int, start: int, count: int) -> np.ndarray:
    """64-bit words for absolute step indices ``start .. start + count - 1``."""
    out = np.empty(count, dtype=np.uint64)
    key = np.array([int(seed) & _MASK64, int(level) & _MASK64], dtype=np.uint64)
    pos = start
    stop = start + count
    while pos < stop:
        block = pos // BLOCK
        off = pos - block * BLOCK
        take = min(stop, (block + 1) * BLOCK) - pos
        skip = off % 4
        counter = np.array([off // 4, block & _MASK64, tag, 0], dtype=np.uint64)
        bitgen = np.random.Philox(key=key, counter=counter)
        out[pos - start : pos - start + take] = bitgen.random_raw(skip + take)[skip:]
        pos += take
    return out


def _level_increments(seed, level, tag, spec, signs=False):
    raw = _raw_words(seed, level, tag, -spec.anchor, spec.n_steps)
    out = np.empty(spec.n_steps)
    if signs:
        _kernels.raw_to_sign(raw, math.sqrt(spec.dt), out)
    else:
        _kernels.raw_to_normal(raw, math.sqrt(spec.dt), out)
    return out


def generate(seed: int, spec: GridSpec) -> EnvironmentGrid:
    """Gaussian environment: every increment is N(0, dt), keyed by (seed, level, step)."""
    if not isinstance(spec, GridSpec):
        raise GridError("spec must be a GridSpec")
    seed = int(seed) & _MASK64
    inc = np.empty((spec.n_levels, spec.n_steps))
    for r, level in enumerate(range(spec.level_min, spec.level_max + 1)):
        inc[r] = _level_increments(seed, level, 0, spec)
    return EnvironmentGrid(spec, inc, seed)


def generate_signs(seed: int, spec: GridSpec) -> EnvironmentGrid:
    """Environment whose increments are independent fair signs times sqrt(dt).

    On each step the path is linear with slope +-1/sqrt(dt), which is the
    rescaled simple random walk used for positive-association arguments.
    """
    seed = int(seed) & _MASK64
    inc = np.empty((spec.n_levels, spec.n_steps))
    for r, level in enumerate(range(spec.level_min, spec.level_max + 1)):
        inc[r] = _level_increments(seed, level, _TAG_SIGNS, spec, signs=True)
    return EnvironmentGrid(spec, inc, seed, depth=-1)


def refine(env: EnvironmentGrid) -> EnvironmentGrid:
    """Halve dt by Brownian-bridge midpoints, keeping every coarse grid value.

    A coarse increment D over a step of length dt splits into
    D/2 + (sqrt(dt)/2) xi and D/2 - (sqrt(dt)/2) xi with xi ~ N(0, 1) drawn
    from the stream tagged by the new refinement depth.
    """
    if env.depth < 0:
        raise GridError("sign environments cannot be refined")
    spec = env.spec
    fine = GridSpec(spec.t_min, spec.t_max, spec.dt / 2, spec.level_min, spec.level_max)
    depth = env.depth + 1
    inc = np.empty((spec.n_levels, 2 * spec.n_steps))
    for r, level in enumerate(range(spec.level_min, spec.level_max + 1)):
        raw = _raw_words(env.seed, level, depth, -spec.anchor, spec.n_steps)
        xi = np.empty(spec.n_steps)
        _kernels.raw_to_normal(raw, 0.5 * math.sqrt(spec.dt), xi)
        half = 0.5 * env.increments[r]
        inc[r, 0::2] = half + xi
        inc[r, 1::2] = half - xi
    return EnvironmentGrid(fine, inc, env.seed, depth)


def bm_value(env: EnvironmentGrid, level: int, t: float) -> float:
    """B_level(t) for a grid time t."""
    return float(env.paths[env.spec.level_row(level), env.spec.index(t)])


def dump(env: EnvironmentGrid, path) -> None:
    """Write the environment as a little-endian header followed by float64 increments."""
    s = env.spec
    header = _HEADER.pack(
        _MAGIC, s.t_min, s.t_max, s.dt, s.level_min, s.level_max, env.seed, env.depth, s.n_steps
    )
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(env.increments, dtype="<f8").tobytes())


def restore(path) -> EnvironmentGrid:
    data = Path(path).read_bytes()
    magic, t_min, t_max, dt, lmin, lmax, seed, depth, n_steps = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise GridError("not an environment dump")
    spec = GridSpec(t_min, t_max, dt, lmin, lmax)
    if spec.n_steps != n_steps:
        raise GridError("corrupt header")
    inc = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
    return EnvironmentGrid(spec, inc.reshape(spec.n_levels, n_steps), seed, depth)


def with_levels(spec: GridSpec, level_min: int, level_max: int) -> GridSpec:
    return replace(spec, level_min=level_min, level_max=level_max)
