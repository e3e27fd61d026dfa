"""Monte Carlo and pathwise checks of exact identities and inequalities for the polymer."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .environment import GridSpec, generate, generate_signs, refine, replica_seed
from .parallel import map_replicas
from .polymer import (
    TRUNCATION_SCALE,
    LatticePoint,
    PreconditionError,
    StationarySpec,
    _log_partition_within,
    log_partition,
    log_partition_stationary,
    stationary_row,
)
from .specfun import psi


class InstabilityWarning(RuntimeWarning):
    """A Monte Carlo estimate is dominated by a few samples."""


@dataclass(frozen=True)
class IdentityReport:
    """Outcome of one check.

    The verdict passes when |lhs - rhs| <= z * std_err.  With
    ``alternative="greater"`` it passes when lhs - rhs >= -z * std_err.
    Composite checks also list their sub-verdicts in ``checks``, and then
    the verdict is the conjunction of all of them.
    """

    name: str
    lhs: float
    rhs: float
    std_err: float
    n_samples: int
    verdict: bool
    z: float = 3.0
    alternative: str = "two-sided"
    seed: int | None = None
    params: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def z_score(self) -> float:
        return (self.lhs - self.rhs) / self.std_err if self.std_err > 0 else math.copysign(math.inf, self.lhs - self.rhs)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _within(lhs, rhs, se, z, alternative="two-sided") -> bool:
    if alternative == "greater":
        return bool(lhs - rhs >= -z * se)
    return bool(abs(lhs - rhs) <= z * se)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def snap_to_grid(t: float, dt: float) -> float:
    return round(t / dt) * dt


# --------------------------------------------------------------------------
# stationary model identities


@dataclass(frozen=True)
class _StationaryReplica:
    spec: StationarySpec
    dt: float
    seed: int

    def grid(self) -> GridSpec:
        return GridSpec(-self.spec.truncation, self.spec.t, self.dt, 0, self.spec.n)

    def __call__(self, i: int) -> float:
        env = generate(replica_seed(self.seed, i), self.grid())
        return log_partition_stationary(env, self.spec)


def _stationary_spec(eta, theta, t, n, dt, truncation=None) -> StationarySpec:
    T = truncation if truncation is not None else TRUNCATION_SCALE / min(eta, theta)
    return StationarySpec(eta, theta, snap_to_grid(t, dt), n, math.ceil(T / dt - 1e-9) * dt)


def rains_ejs_rhs(eta: float, theta: float, t: float, n: int) -> float:
    return math.exp(n * (psi(-1, theta) - psi(-1, eta)) - t * (theta**2 - eta**2) / 2)


def rains_ejs_check(
    params: tuple[float, float, float, int],
    n_samples: int,
    seed: int,
    dt: float = 0.0025,
    z: float = 3.0,
    truncation: float | None = None,
    threads: int | None = None,
) -> IdentityReport:
    """E exp((eta - theta) log Z^{(eta,theta)}_{t,n}) against its closed form."""
    eta, theta, t, n = params
    if not (eta > 0 and theta > 0):
        raise ValueError("eta and theta must be positive")
    spec = _stationary_spec(eta, theta, t, n, dt, truncation)
    rhs = rains_ejs_rhs(eta, theta, spec.t, n)
    info = dict(eta=eta, theta=theta, t=spec.t, n=n, dt=dt, truncation=spec.truncation)
    if eta == theta:
        return IdentityReport("rains-ejs", 1.0, rhs, 0.0, 0, rhs == 1.0, z, seed=seed, params=info)
    logs = map_replicas(_StationaryReplica(spec, dt, seed), n_samples, threads)
    y = np.exp((eta - theta) * logs)
    lhs, se = _mean_se(y)
    stable = bool(np.all(np.isfinite(y))) and y.max() <= 0.05 * math.fsum(y)
    if not stable:
        warnings.warn("Monte Carlo average dominated by few samples; verdict band doubled", InstabilityWarning)
        z = 2 * z
    return IdentityReport(
        "rains-ejs",
        lhs,
        rhs,
        se,
        n_samples,
        _within(lhs, rhs, se, z),
        z,
        seed=seed,
        params=info,
        extra=dict(relative_se=se / rhs, stable=stable),
    )


def stationary_mean_check(
    theta: float,
    t: float,
    n: int,
    n_samples: int,
    seed: int,
    dt: float = 0.005,
    z: float = 3.0,
    threads: int | None = None,
) -> IdentityReport:
    """Mean of log Z^theta_{t,n} against t*theta - n*psi_0(theta).

    ``t`` is rounded to the grid and the rounded value enters the closed form.
    """
    spec = _stationary_spec(theta, theta, t, n, dt)
    rhs = spec.t * theta - n * psi(0, theta)
    logs = map_replicas(_StationaryReplica(spec, dt, seed), n_samples, threads)
    lhs, se = _mean_se(logs)
    info = dict(theta=theta, t=spec.t, n=n, dt=dt, truncation=spec.truncation)
    return IdentityReport("stationary-mean", lhs, rhs, se, n_samples, _within(lhs, rhs, se, z), z, seed=seed, params=info)


@dataclass(frozen=True)
class _CoupledStationary:
    spec: StationarySpec
    dt: float
    levels: int
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate(replica_seed(self.seed, i), GridSpec(-self.spec.truncation, self.spec.t, self.dt, 0, self.spec.n))
        out = [log_partition_stationary(env, self.spec)]
        for _ in range(self.levels - 1):
            env = refine(env)
            out.append(log_partition_stationary(env, self.spec))
        return np.array(out)


def stationary_bias_sweep(
    theta: float,
    t: float,
    n: int,
    n_samples: int,
    seed: int,
    dts: Sequence[float] = (0.02, 0.01, 0.005),
    threads: int | None = None,
) -> dict:
    """Effect of halving dt on the mean of log Z^theta, measured on coupled environments.

    Each replica is generated at the coarsest dt and refined by Brownian
    bridges, so the paired differences isolate the discretisation effect.
    Returns the mean shift for each halving with its standard error, and
    whether the magnitudes decrease.
    """
    dts = list(dts)
    for a, b in zip(dts, dts[1:]):
        if not math.isclose(b, a / 2):
            raise ValueError("dts must halve successively")
    spec = _stationary_spec(theta, theta, t, n, dts[0])
    rhs = spec.t * theta - n * psi(0, theta)
    vals = map_replicas(_CoupledStationary(spec, dts[0], len(dts), seed), n_samples, threads)
    diffs = np.diff(vals, axis=1)
    shift = [_mean_se(diffs[:, i]) for i in range(diffs.shape[1])]
    means = [_mean_se(vals[:, i]) for i in range(vals.shape[1])]
    mags = [abs(m) for m, _ in shift]
    return dict(
        dts=dts,
        mean=[m for m, _ in means],
        bias=[m - rhs for m, _ in means],
        bias_se=[s for _, s in means],
        halving_shift=[m for m, _ in shift],
        halving_shift_se=[s for _, s in shift],
        monotone=all(a > b for a, b in zip(mags, mags[1:])),
    )


@dataclass(frozen=True)
class _BurkeReplica:
    spec: StationarySpec
    dt: float
    s_grid: tuple
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate(replica_seed(self.seed, i), GridSpec(-self.spec.truncation, self.spec.t, self.dt, 0, self.spec.n))
        times, row = stationary_row(env, self.spec)
        t = self.spec.t
        idx = [int(round((t - s - times[0]) / self.dt)) for s in self.s_grid]
        log_t = row[-1]
        return np.array([self.spec.theta * s - log_t + row[j] for s, j in zip(self.s_grid, idx)])


def burke_increment_test(
    theta: float,
    t: float,
    n: int,
    n_samples: int,
    seed: int,
    s_grid: Sequence[float] = (0.0, 1.0, 2.0),
    dt: float = 0.01,
    z: float = 3.0,
    alpha: float = 0.01,
    threads: int | None = None,
) -> IdentityReport:
    """Y(s) = theta*s - log Z^theta_{t,n} + log Z^theta_{t-s,n} should be a standard Brownian motion in s.

    Increments over the intervals of ``s_grid`` are tested for a centred
    Gaussian law of variance equal to the interval length (KS, Bonferroni
    over intervals) and for zero correlation between neighbouring intervals.
    The headline lhs/rhs pair is the variance on the first interval.
    """
    s_grid = tuple(float(s) for s in s_grid)
    if len(s_grid) < 2:
        raise PreconditionError("need at least two s values")
    if any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise PreconditionError("s values must increase")
    spec = _stationary_spec(theta, theta, t, n, dt)
    if spec.t - s_grid[-1] < -spec.truncation:
        raise PreconditionError("s grid reaches beyond the truncation window")
    Y = map_replicas(_BurkeReplica(spec, dt, s_grid, seed), n_samples, threads)
    inc = np.diff(Y, axis=1)
    lengths = np.diff(s_grid)
    checks = {}
    ks_p = []
    for i, L in enumerate(lengths):
        ks_p.append(float(stats.kstest(inc[:, i] / math.sqrt(L), "norm").pvalue))
        m, se_m = _mean_se(inc[:, i])
        checks[f"mean_{i}"] = _within(m, 0.0, se_m, z)
    checks["ks"] = min(ks_p) * len(ks_p) > alpha
    rho = []
    for i in range(inc.shape[1] - 1):
        r = float(np.corrcoef(inc[:, i], inc[:, i + 1])[0, 1])
        rho.append(r)
        checks[f"corr_{i}"] = abs(r) <= z / math.sqrt(n_samples)
    var = math.fsum((inc[:, 0] - inc[:, 0].mean()) ** 2) / (n_samples - 1)
    x2 = (inc[:, 0] - inc[:, 0].mean()) ** 2
    se_var = float(np.std(x2, ddof=1) / math.sqrt(n_samples))
    checks["variance"] = _within(var, lengths[0], se_var, z)
    return IdentityReport(
        "burke",
        var,
        float(lengths[0]),
        se_var,
        n_samples,
        all(checks.values()),
        z,
        seed=seed,
        params=dict(theta=theta, t=spec.t, n=n, dt=dt, s_grid=list(s_grid), truncation=spec.truncation),
        checks=checks,
        extra=dict(ks_pvalues=ks_p, correlations=rho, variances=[float(np.var(inc[:, i], ddof=1)) for i in range(inc.shape[1])]),
    )


@dataclass(frozen=True)
class _DufresneReplica:
    nu: float
    horizon: float
    dt: float
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate(replica_seed(self.seed, i), GridSpec(-self.horizon, 0.0, self.dt, 0, 0))
        s = env.times[:-1]
        w = np.exp(math.sqrt(2.0) * env.paths[0, :-1] + self.nu * s)
        fine = math.fsum(w) * self.dt
        coarse = math.fsum(w[::2]) * 2 * self.dt
        return np.array([fine, coarse])


def dufresne_test(
    nu: float,
    n_samples: int,
    horizon: float | None = None,
    seed: int = 0,
    dt: float = 1e-3,
    alpha: float = 0.01,
    threads: int | None = None,
) -> IdentityReport:
    """Law of the integral of exp(sqrt(2) B(s) + nu s) over [-horizon, 0] against 1/Gamma(nu).

    The integral is a left Riemann sum on the grid.  It is compared with
    reciprocal Gamma(nu) samples by a two-sample KS test.  The report's
    lhs is the KS statistic and rhs is 0.  ``std_err`` is the
    critical value divided by z, so the primary check is the KS test at
    level ``alpha``.  The same paths summed on the doubled grid give
    ``bias_band``, the KS distance between the two step sizes.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    horizon = 60.0 / nu if horizon is None else horizon
    if horizon * nu < 40:
        warnings.warn("horizon * nu < 40: truncation bias may be visible", RuntimeWarning)
    horizon = math.ceil(horizon / (2 * dt) - 1e-9) * 2 * dt
    vals = map_replicas(_DufresneReplica(nu, horizon, dt, seed), n_samples, threads)
    rng = np.random.Generator(np.random.PCG64(replica_seed(seed, n_samples + 1)))
    ref = 1.0 / rng.gamma(nu, 1.0, size=n_samples)
    ks = stats.ks_2samp(vals[:, 0], ref, method="asymp")
    ks_coarse = stats.ks_2samp(vals[:, 1], ref, method="asymp")
    band = float(stats.ks_2samp(vals[:, 0], vals[:, 1], method="asymp").statistic)
    crit = float(stats.kstwo.ppf(1 - alpha, n_samples // 2)) if n_samples > 1 else 1.0
    z = 3.0
    checks = {"ks": bool(ks.pvalue > alpha)}
    return IdentityReport(
        "dufresne",
        float(ks.statistic),
        0.0,
        crit / z,
        n_samples,
        all(checks.values()),
        z,
        seed=seed,
        params=dict(nu=nu, horizon=horizon, dt=dt),
        checks=checks,
        extra=dict(
            ks_pvalue=float(ks.pvalue),
            ks_pvalue_one_sample=float(stats.kstest(vals[:, 0], stats.invgamma(nu).cdf).pvalue),
            ks_statistic_doubled_dt=float(ks_coarse.statistic),
            bias_band=band,
            sample_mean=float(np.mean(vals[:, 0])),
        ),
    )


# --------------------------------------------------------------------------
# pathwise inequalities


def superadditivity_suite(env, point_triples) -> list[tuple[tuple, float]]:
    """slack = log Z(p,q) - log Z(p,r) - log Z(r,q) for each admissible triple."""
    out = []
    for p, r, q in point_triples:
        if not (p.precedes(r) and r.precedes(q)):
            raise PreconditionError(f"triple {(p, r, q)} is not ordered")
        left = log_partition(env, p, r)
        right = log_partition(env, r, q)
        whole = log_partition(env, p, q)
        if left == -math.inf or right == -math.inf:
            slack = math.inf
        else:
            slack = whole - left - right
        out.append(((p, r, q), slack))
    return out


def midpoint(p: LatticePoint, q: LatticePoint) -> LatticePoint:
    if (p.level + q.level) % 2:
        raise PreconditionError("levels of p and q must have an even sum")
    return LatticePoint(0.5 * (p.time + q.time), (p.level + q.level) // 2)


def constrained_superadditivity_suite(env, pairs, width: float) -> list[tuple[tuple, float]]:
    """Slack of Z^w(p,r) Z^w(r,q) <= Z^w(p,q) with r the midpoint of p and q.

    All three corridors have the same width around the line through p and q.
    """
    out = []
    for p, q in pairs:
        r = midpoint(p, q)
        env.spec.index(r.time)
        left = _log_partition_within(env, p, r, width)
        right = _log_partition_within(env, r, q, width)
        whole = _log_partition_within(env, p, q, width)
        slack = math.inf if (left == -math.inf or right == -math.inf) else whole - left - right
        out.append(((p, r, q), slack))
    return out


def random_triples(rng: np.random.Generator, t_max: float, n_levels: int, dt: float, count: int):
    """Random ordered grid triples p <= r <= q in [0, t_max] x {0..n_levels}."""
    steps = int(round(t_max / dt))
    out = []
    while len(out) < count:
        js = np.sort(rng.integers(0, steps + 1, size=3))
        ls = np.sort(rng.integers(0, n_levels + 1, size=3))
        out.append(tuple(LatticePoint(float(j * dt), int(level)) for j, level in zip(js, ls)))
    return out


def random_midpoint_pairs(rng: np.random.Generator, t_max: float, n_levels: int, dt: float, count: int):
    """Random ordered pairs whose midpoint is a grid point."""
    steps = int(round(t_max / dt))
    out = []
    while len(out) < count:
        j0, j1 = np.sort(rng.integers(0, steps + 1, size=2))
        l0, l1 = np.sort(rng.integers(0, n_levels + 1, size=2))
        if (j1 - j0) % 2 or (l1 - l0) % 2:
            continue
        out.append((LatticePoint(float(j0 * dt), int(l0)), LatticePoint(float(j1 * dt), int(l1))))
    return out


# --------------------------------------------------------------------------
# positive association on the sign-walk environment


@dataclass(frozen=True)
class EventSpec:
    """The event {log Z_{p,q} <= threshold}."""

    p: LatticePoint
    q: LatticePoint
    threshold: float


def _event_grid(events, walk_resolution) -> GridSpec:
    t0 = min(0.0, min(e.p.time for e in events))
    t1 = max(e.q.time for e in events)
    l0 = min(e.p.level for e in events)
    l1 = max(e.q.level for e in events)
    return GridSpec(t0, t1, 1.0 / walk_resolution, l0, l1)


@dataclass(frozen=True)
class _SignReplica:
    events: tuple
    grid: GridSpec
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate_signs(replica_seed(self.seed, i), self.grid)
        return np.array([log_partition(env, e.p, e.q) for e in self.events])


def sign_walk_log_partitions(events, n_samples, walk_resolution, seed, threads=None) -> np.ndarray:
    events = tuple(events)
    return map_replicas(_SignReplica(events, _event_grid(events, walk_resolution), seed), n_samples, threads)


def fkg_discrete_check(
    event_specs: Sequence[EventSpec],
    n_samples: int,
    walk_resolution: int,
    seed: int,
    z: float = 3.0,
    threads: int | None = None,
    alternative: str = "greater",
) -> IdentityReport:
    """P[all events] >= product of P[event] for decreasing events of the sign-walk environment.

    Each Brownian motion is replaced by linear interpolation of a simple
    random walk with steps +-1/sqrt(walk_resolution) at spacing
    1/walk_resolution.  The standard error of joint - product comes from
    its influence function, sum_i of the indicator products.  Use
    ``alternative="two-sided"`` for a control with independent events,
    where equality is expected.
    """
    events = tuple(event_specs)
    if not events:
        raise ValueError("need at least one event")
    logs = sign_walk_log_partitions(events, n_samples, walk_resolution, seed, threads)
    ind = (logs <= np.array([e.threshold for e in events])).astype(float)
    marg = ind.mean(axis=0)
    both = np.prod(ind, axis=1)
    joint = float(both.mean())
    product = float(np.prod(marg))
    if np.any(marg * n_samples < 10) or joint * n_samples < 10:
        warnings.warn("an event has too few occurrences for a reliable estimate", RuntimeWarning)
    # influence function of joint - prod_i p_i
    infl = both.copy()
    for i in range(len(events)):
        others = np.prod(np.delete(marg, i)) if len(events) > 1 else 1.0
        infl -= others * ind[:, i]
    se = float(np.std(infl, ddof=1) / math.sqrt(n_samples)) if len(events) > 1 else 0.0
    return IdentityReport(
        "fkg",
        joint,
        product,
        se,
        n_samples,
        _within(joint, product, se, z, alternative),
        z,
        alternative=alternative,
        seed=seed,
        params=dict(walk_resolution=walk_resolution, events=[asdict(e) for e in events]),
        extra=dict(marginals=marg.tolist()),
    )
