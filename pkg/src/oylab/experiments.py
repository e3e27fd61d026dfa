"""Desk-scale tail experiments and exponent fits.

A tail curve is a list of probabilities indexed by a positive deviation
variable.  It comes in two kinds:
  * ``binomial``: the empirical frequency of an event over replicas (free
    energy tails).  Confidence bounds are Wilson intervals.
  * ``mean``: the average over environments of a quenched probability (TF
    and exit-point tails).  Bounds are mean +/- 1.96 standard errors.
    The exceedance count reported is the effective count (mean / se)^2.

Exponents come from a least-squares fit of log(-log p) on log s.  The
slope is the exponent alpha in p ~ exp(-C s^alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import isotonic_regression

from .environment import GridSpec, generate, refine, replica_seed
from .gibbs import first_jump_tail_probs, quenched_tf_tail
from .parallel import map_replicas
from .polymer import TRUNCATION_SCALE, LatticePoint, PreconditionError, StationarySpec, log_partition, log_partition_stationary
from .specfun import free_energy, psi, shape_constants, solve_theta

MIN_EXCEEDANCES = 30


class FitError(ValueError):
    """Not enough reliable points to fit an exponent."""


def default_dt(n: int) -> float:
    """0.05 n^(-1/3), rounded down to the reciprocal of an integer."""
    return 1.0 / math.ceil(n ** (1.0 / 3.0) / 0.05)


def default_window(n: int) -> tuple[float, float]:
    return (0.7, min(4.0, n ** (2.0 / 3.0) / 8.0))


# --------------------------------------------------------------------------
# tail curves


@dataclass
class TailCurve:
    side: str
    s_values: list[float]
    log_probs: list[float]
    ci_lo: list[float]  # probability scale
    ci_hi: list[float]
    n_replicas: int
    raw_log_probs: list[float] = field(default_factory=list)
    estimates: list[float] = field(default_factory=list)
    n_exceed: list[float] = field(default_factory=list)
    reliable: list[bool] = field(default_factory=list)
    kind: str = "binomial"
    std_errs: list[float] = field(default_factory=list)
    variable: str = "s"

    @property
    def probs(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_probs))

    def rows(self):
        """(s, estimate, ci_lo, ci_hi, n_exceed) with probabilities on the natural scale."""
        yield from zip(self.s_values, self.estimates, self.ci_lo, self.ci_hi, self.n_exceed)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _nonincreasing(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    return isotonic_regression(p, weights=w, increasing=False).x


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def curve_from_counts(side, s_values, counts, n_replicas, variable="s") -> TailCurve:
    counts = np.asarray(counts, dtype=float)
    p_raw = counts / n_replicas
    p_iso = _nonincreasing(p_raw, np.full(len(p_raw), float(n_replicas)))
    lo, hi = zip(*(wilson_interval(k, n_replicas) for k in counts)) if len(counts) else ((), ())
    return TailCurve(
        side,
        [float(s) for s in s_values],
        [_log(p) for p in p_iso],
        [float(x) for x in lo],
        [float(x) for x in hi],
        int(n_replicas),
        raw_log_probs=[_log(p) for p in p_raw],
        estimates=[float(p) for p in p_raw],
        n_exceed=[float(k) for k in counts],
        reliable=[bool(k >= MIN_EXCEEDANCES) for k in counts],
        kind="binomial",
        std_errs=[math.sqrt(p * (1 - p) / n_replicas) for p in p_raw],
        variable=variable,
    )


def curve_from_means(side, s_values, rows: np.ndarray, variable="s") -> TailCurve:
    """Curve from per-replica quenched probabilities, rows shape (replicas, len(s_values))."""
    n = rows.shape[0]
    means = np.array([math.fsum(rows[:, j]) / n for j in range(rows.shape[1])])
    ses = np.array([np.std(rows[:, j], ddof=1) / math.sqrt(n) if n > 1 else math.inf for j in range(rows.shape[1])])
    iso = _nonincreasing(means, np.ones(len(means)))
    with np.errstate(divide="ignore", invalid="ignore"):
        n_eff = np.where(ses > 0, (means / ses) ** 2, np.where(means > 0, np.inf, 0.0))
    return TailCurve(
        side,
        [float(s) for s in s_values],
        [_log(p) for p in iso],
        [max(m - 1.96 * e, 0.0) for m, e in zip(means, ses)],
        [min(m + 1.96 * e, 1.0) for m, e in zip(means, ses)],
        n,
        raw_log_probs=[_log(m) for m in means],
        estimates=[float(m) for m in means],
        n_exceed=[float(x) for x in n_eff],
        reliable=[bool(x >= MIN_EXCEEDANCES) for x in n_eff],
        kind="mean",
        std_errs=[float(e) for e in ses],
        variable=variable,
    )


# --------------------------------------------------------------------------
# exponent fits


@dataclass(frozen=True)
class ExponentFit:
    alpha: float
    alpha_ci: tuple[float, float]
    window: tuple[float, float]
    r_squared: float
    intercept: float = math.nan
    n_points: int = 0
    shift: float = 0.0


def _regress(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


def fit_exponent(
    curve: TailCurve, window: tuple[float, float] | None = None, n_boot: int = 1000, seed: int = 0, shift: float = 0.0
) -> ExponentFit:
    """Slope of log(-log p) against log(s + shift) over the reliable points in ``window``.

    ``shift = 0`` is the standard fit.  The bootstrap redraws each point
    from its sampling law (binomial counts, or a normal with the reported
    standard error for mean curves), refits, and takes the 2.5% and 97.5%
    quantiles of the slopes.  Curves without sampling noise (n_replicas
    = 0) get a degenerate interval.
    """
    lo, hi = window if window is not None else (min(curve.s_values), max(curve.s_values))
    s = np.asarray(curve.s_values)
    lp = np.asarray(curve.log_probs)
    rel = np.asarray(curve.reliable, dtype=bool) if curve.reliable else np.ones(len(s), dtype=bool)
    sel = (s >= lo - 1e-12) & (s <= hi + 1e-12) & rel & np.isfinite(lp) & (lp < 0) & (s + shift > 0)
    if sel.sum() < 4:
        raise FitError(f"only {int(sel.sum())} reliable points in window [{lo}, {hi}], need 4")
    x = np.log(s[sel] + shift)
    y = np.log(-lp[sel])
    alpha, intercept, r2 = _regress(x, y)
    ci = (alpha, alpha)
    if n_boot > 0 and curve.n_replicas > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = np.flatnonzero(sel)
        slopes = []
        for _ in range(n_boot):
            if curve.kind == "binomial":
                p = rng.binomial(curve.n_replicas, np.exp(lp[idx])) / curve.n_replicas
            else:
                se = np.asarray(curve.std_errs)[idx]
                p = np.exp(lp[idx]) + se * rng.standard_normal(len(idx))
            p = _nonincreasing(p, np.ones(len(p)))
            ok = (p > 0) & (p < 1)
            if ok.sum() < 2:
                continue
            slopes.append(_regress(x[ok], np.log(-np.log(p[ok])))[0])
        if slopes:
            ci = (float(np.quantile(slopes, 0.025)), float(np.quantile(slopes, 0.975)))
    return ExponentFit(alpha, ci, (float(lo), float(hi)), r2, intercept, int(sel.sum()), shift)


# --------------------------------------------------------------------------
# free-energy tails


@dataclass(frozen=True)
class _FreeEnergyReplica:
    model: str
    n: int
    t: float
    theta: float
    dt: float
    truncation: float
    seed: int

    def __call__(self, i: int) -> float:
        key = replica_seed(self.seed, i)
        if self.model == "point-to-point":
            env = generate(key, GridSpec(0.0, self.t, self.dt, 1, self.n))
            return log_partition(env, LatticePoint(0.0, 1), LatticePoint(self.t, self.n))
        env = generate(key, GridSpec(-self.truncation, self.t, self.dt, 0, self.n))
        return log_partition_stationary(env, StationarySpec(self.theta, self.theta, self.t, self.n, self.truncation))


def _model_setup(model, n, t, dt, theta):
    if model not in ("point-to-point", "stationary"):
        raise ValueError("model must be 'point-to-point' or 'stationary'")
    dt = default_dt(n) if dt is None else dt
    t = float(n) if t is None else t
    t = round(t / dt) * dt
    if model == "stationary":
        theta = solve_theta(t / n) if theta is None else theta
        center = t * theta - n * float(psi(0, theta))
    else:
        theta = math.nan
        center = free_energy(t, n)
    return dt, t, theta, center


def simulate_log_partitions(
    model: str,
    n: int,
    t: float | None,
    n_replicas: int,
    seed: int,
    dt: float | None = None,
    theta: float | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """(log Z - f) / n^(1/3) for each replica, f the matching limit-shape value."""
    dt, t, theta, center = _model_setup(model, n, t, dt, theta)
    trunc = math.ceil(TRUNCATION_SCALE / theta / dt) * dt if model == "stationary" else 0.0
    logs = map_replicas(_FreeEnergyReplica(model, n, t, theta, dt, trunc, seed), n_replicas, threads)
    return (logs - center) / n ** (1.0 / 3.0)


def tail_curve(
    model: str,
    n: int,
    t: float | None,
    side: str,
    s_values,
    n_replicas: int,
    seed: int,
    dt: float | None = None,
    theta: float | None = None,
    threads: int | None = None,
    samples: np.ndarray | None = None,
) -> TailCurve:
    """Empirical P[X > s] (upper) or P[X < -s] (lower), X the centred and scaled free energy.

    Pass ``samples`` to reuse replicas already drawn by
    :func:`simulate_log_partitions` with the same arguments.
    """
    s = np.asarray(s_values, dtype=float)
    if np.any(s < 0):
        raise ValueError("s values must be nonnegative")
    if np.any(s > n ** (2.0 / 3.0) / 4 + 1e-9):
        raise ValueError("s values must lie in the moderate window s <= n^(2/3)/4")
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    x = simulate_log_partitions(model, n, t, n_replicas, seed, dt, theta, threads) if samples is None else samples
    if side == "upper":
        counts = [int(np.count_nonzero(x > v)) for v in s]
    else:
        counts = [int(np.count_nonzero(x < -v)) for v in s]
    return curve_from_counts(side, s, counts, len(x))


def dt_halving_pilot(
    model: str, n: int, t: float | None, n_replicas: int, seed: int, dt: float | None = None, halvings: int = 2,
    theta: float | None = None,
) -> list[dict]:
    """Mean shift of X under successive dt halvings on coupled (refined) environments."""
    dt, t, theta, center = _model_setup(model, n, t, dt, theta)
    trunc = math.ceil(TRUNCATION_SCALE / theta / dt) * dt if model == "stationary" else 0.0
    scale = n ** (1.0 / 3.0)
    vals = np.empty((n_replicas, halvings + 1))
    for i in range(n_replicas):
        key = replica_seed(seed, i)
        if model == "point-to-point":
            env = generate(key, GridSpec(0.0, t, dt, 1, n))
            fn = lambda e: log_partition(e, LatticePoint(0.0, 1), LatticePoint(t, n))  # noqa: E731
        else:
            env = generate(key, GridSpec(-trunc, t, dt, 0, n))
            st = StationarySpec(theta, theta, t, n, trunc)
            fn = lambda e: log_partition_stationary(e, st)  # noqa: E731
        for h in range(halvings + 1):
            vals[i, h] = (fn(env) - center) / scale
            if h < halvings:
                env = refine(env)
    out = []
    for h in range(halvings + 1):
        row = dict(dt=dt / 2**h, mean=math.fsum(vals[:, h]) / n_replicas)
        if h:
            d = vals[:, h] - vals[:, h - 1]
            row["shift"] = math.fsum(d) / n_replicas
            row["shift_se"] = float(np.std(d, ddof=1) / math.sqrt(n_replicas)) if n_replicas > 1 else math.nan
        out.append(row)
    return out


# --------------------------------------------------------------------------
# transversal fluctuation


@dataclass(frozen=True)
class _TFReplica:
    n: int
    t: float
    dt: float
    b_values: tuple[float, ...]
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate(replica_seed(self.seed, i), GridSpec(0.0, self.t, self.dt, 1, self.n))
        tails = quenched_tf_tail(env, LatticePoint(0.0, 1), LatticePoint(self.t, self.n), self.b_values)
        return np.array([tl.log_prob for tl in tails])


@dataclass
class TFResult:
    annealed: TailCurve
    quenched_frequency: TailCurve
    c: float
    beyond_max: list[bool]


def tf_experiment(
    n: int,
    b_values,
    n_replicas: int,
    seed: int,
    c: float = 1.0,
    t: float | None = None,
    dt: float | None = None,
    threads: int | None = None,
) -> TFResult:
    """Annealed E Q[TF > b h^(2/3)] and the frequency of Q[TF > b h^(2/3)] > exp(-c b^2 n^(1/3)).

    Paths run from (0, 1) to (t, n), t = n by default.
    """
    b = tuple(float(v) for v in b_values)
    if any(v <= 0 for v in b):
        raise ValueError("b values must be positive")
    dt = default_dt(n) if dt is None else dt
    t = round((float(n) if t is None else t) / dt) * dt
    logs = map_replicas(_TFReplica(n, t, dt, b, seed), n_replicas, threads)
    probs = np.exp(logs)
    annealed = curve_from_means("upper", b, probs, variable="b")
    thresh = np.array([-c * v * v * n ** (1.0 / 3.0) for v in b])
    counts = np.count_nonzero(logs > thresh, axis=0)
    freq = curve_from_counts("upper", b, counts, n_replicas, variable="b")
    beyond = [bool(np.all(probs[:, j] == 0)) for j in range(len(b))]
    return TFResult(annealed, freq, c, beyond)


# --------------------------------------------------------------------------
# exit point of the stationary model


@dataclass(frozen=True)
class _ExitReplica:
    spec: StationarySpec
    dt: float
    upper: tuple[float, ...]
    lower: tuple[float, ...]
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate(replica_seed(self.seed, i), GridSpec(-self.spec.truncation, self.spec.t, self.dt, 0, self.spec.n))
        up = first_jump_tail_probs(env, self.spec, self.upper, "upper")
        low = first_jump_tail_probs(env, self.spec, self.lower, "lower")
        return np.concatenate([up, low])


@dataclass
class ExitResult:
    upper: TailCurve
    lower: TailCurve
    two_sided: TailCurve
    center: float
    theta: float


def exit_experiment(
    theta: float | None,
    t: float,
    n: int,
    x_values,
    n_replicas: int,
    seed: int,
    dt: float | None = None,
    truncation: float | None = None,
    threads: int | None = None,
) -> ExitResult:
    """Annealed Q^theta[s_0 - e > x n^(2/3)] and Q^theta[s_0 - e < -x n^(2/3)], e = t - n psi_1(theta).

    ``theta=None`` selects the characteristic value psi_1(theta) = t / n,
    for which e = 0.  The two-sided curve is the sum of both tails.
    """
    dt = default_dt(n) if dt is None else dt
    t = round(t / dt) * dt
    theta = solve_theta(t / n) if theta is None else theta
    center = t - n * float(psi(1, theta))
    T = TRUNCATION_SCALE / theta if truncation is None else truncation
    T = math.ceil(T / dt - 1e-9) * dt
    spec = StationarySpec(theta, theta, t, n, T)
    xs = np.asarray(x_values, dtype=float)
    if np.any(xs < 0):
        raise ValueError("x values must be nonnegative")
    unit = n ** (2.0 / 3.0)
    upper = tuple(float(center + x * unit) for x in xs)
    lower = tuple(float(center - x * unit) for x in xs)
    if min(lower) < -T:
        raise PreconditionError("lower exit points fall outside the truncation window")
    raw = map_replicas(_ExitReplica(spec, dt, upper, lower, seed), n_replicas, threads)
    up, low = raw[:, : len(xs)], raw[:, len(xs) :]
    return ExitResult(
        curve_from_means("upper", xs, up, variable="x"),
        curve_from_means("lower", xs, low, variable="x"),
        curve_from_means("two-sided", xs, np.minimum(up + low, 1.0), variable="x"),
        center,
        theta,
    )


# --------------------------------------------------------------------------
# block super-additivity


@dataclass(frozen=True)
class _BlockReplica:
    n: int
    k: int
    dt: float
    seed: int

    def __call__(self, i: int) -> np.ndarray:
        env = generate(replica_seed(self.seed, i), GridSpec(0.0, float(self.n), self.dt, 0, self.n))
        m = self.n // self.k
        pts = [LatticePoint(float(j * m), j * m) for j in range(self.k + 1)]
        blocks = [log_partition(env, a, b) for a, b in zip(pts, pts[1:])]
        total = log_partition(env, pts[0], pts[-1])
        return np.array([total, *blocks])


@dataclass
class BlockReport:
    n: int
    k: int
    n_samples: int
    min_slack: float
    slack_ok: bool
    threshold: float
    joint: float
    product: float
    std_err: float
    verdict: bool
    marginals: list[float]


def block_superadditivity_lower(
    n: int, k: int, n_replicas: int, seed: int, c1: float = -1.0, dt: float | None = None, z: float = 3.0,
    threads: int | None = None,
) -> BlockReport:
    """Pathwise log Z_{0,(n,n)} >= sum of k diagonal blocks, and joint block events vs independence.

    The event for block j is log Z_block > mu m + c1 m^(1/3), m = n / k.
    Disjoint blocks see independent environments, so the joint frequency
    should equal the product of marginals within ``z`` standard errors
    (delta-method error of joint minus product).
    """
    if k < 1 or n % k:
        raise PreconditionError("k must divide n")
    dt = default_dt(n) if dt is None else dt
    vals = map_replicas(_BlockReplica(n, k, dt, seed), n_replicas, threads)
    slack = vals[:, 0] - vals[:, 1:].sum(axis=1)
    m = n // k
    thr = shape_constants().mu * m + c1 * m ** (1.0 / 3.0)
    ind = (vals[:, 1:] > thr).astype(float)
    p = ind.mean(axis=0)
    joint_ind = ind.prod(axis=1)
    joint = float(joint_ind.mean())
    prod = float(np.prod(p))
    infl = joint_ind - sum((ind[:, j] - p[j]) * np.prod(np.delete(p, j)) for j in range(k))
    se = float(np.std(infl, ddof=1) / math.sqrt(n_replicas)) if n_replicas > 1 else math.inf
    min_slack = float(slack.min())
    return BlockReport(
        n, k, n_replicas, min_slack, min_slack >= -1e-9, thr, joint, prod, se,
        bool(abs(joint - prod) <= z * se or k == 1), [float(x) for x in p],
    )
