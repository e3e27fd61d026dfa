"""Command-line driver: ``oylab <command> [--config FILE] [--key value ...]``.

Every run writes three files into ``output_dir``: results.csv (first line
``# schema=1``), summary.json and resolved_config.ini.  The resolved config
lists every parameter with defaults filled in, so feeding it back with
``--config`` repeats the run exactly.

Config files are INI with an ``[experiment]`` section (command, seed,
replicas, threads, output_dir) and a ``[params]`` section.  Values are
Python literals; bare words are read as strings.  Flags override the file.

Exit status: 0 success, 2 a check returned a failing verdict, 1 error.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import identities as idl
from .environment import GridSpec, generate, refine, replica_seed
from .parallel import map_replicas, resolve_threads
from .polymer import LatticePoint, log_partition
from .specfun import free_energy, psi, shape_bounds_check, shape_constants, solve_theta
from .watermelon import build_geometry, watermelon_bound_check

SCHEMA = 1
COMMANDS = ("limit-shape", "identity", "tail", "tf", "exit", "watermelon", "convergence")

# command -> parameter defaults; None means "derived at run time"
PARAMS: dict[str, dict] = {
    "limit-shape": {"points": ((1.0, 1.0), (2.0, 1.0), (1.0, 2.0)), "w_grid": (0.1, 0.2, 0.4)},
    "identity": {
        "check": "rains-ejs",
        "eta": 0.8,
        "theta": 1.2,
        "t": 3.0,
        "n": 3,
        "dt": None,
        "s_grid": (0.0, 1.0, 2.0),
        "nu": 1.0,
        "z": 3.0,
    },
    "tail": {
        "model": "point-to-point",
        "n": 64,
        "t": None,
        "theta": None,
        "side": "upper",
        "s_values": None,
        "dt": None,
        "window": None,
    },
    "tf": {"n": 64, "t": None, "b_values": (0.3, 0.4, 0.5, 0.6, 0.7), "c": 1.0, "dt": None, "window": (0.3, 0.7)},
    "exit": {
        "theta": None,
        "t": None,
        "n": 32,
        "x_values": (0.0, 0.7, 0.9, 1.1, 1.3, 1.5, 1.8),
        "dt": None,
        "truncation": None,
        "window": (0.7, 1.8),
    },
    "watermelon": {"n": 256, "k": 4, "scale": 1.0, "dt": 0.25},
    "convergence": {"n": 8, "dt": 0.02, "halvings": 3},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    replicas: int = 1000
    threads: int = 1
    output_dir: str = "oylab-out"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        unknown = set(self.params) - set(PARAMS[self.command])
        if unknown:
            raise ConfigError(f"unknown parameter(s) for {self.command}: {', '.join(sorted(unknown))}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not (isinstance(self.replicas, int) and self.replicas >= 1):
            raise ConfigError("replicas must be a positive integer")
        if not (isinstance(self.threads, int) and self.threads >= 1):
            raise ConfigError("threads must be a positive integer")

    def resolved(self) -> "ExperimentConfig":
        params = dict(PARAMS[self.command])
        params.update(self.params)
        if self.command == "tail" and params["s_values"] is None:
            s_max = min(4.0, params["n"] ** (2.0 / 3.0) / 4)
            params["s_values"] = tuple(round(0.25 * i, 2) for i in range(int(s_max / 0.25 + 1e-9) + 1))
        return ExperimentConfig(self.command, params, self.seed, self.replicas, self.threads, self.output_dir)


def _literal(text: str, where: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if text.replace("-", "").replace("_", "").isalnum():
            return text
        raise ConfigError(f"{where}: cannot parse value {text!r}") from None


def serialize(config: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["experiment"] = {
        "command": repr(config.command),
        "seed": repr(config.seed),
        "replicas": repr(config.replicas),
        "threads": repr(config.threads),
        "output_dir": repr(config.output_dir),
    }
    cp["params"] = {k: repr(v) for k, v in sorted(config.params.items())}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


_EXPERIMENT_KEYS = ("command", "seed", "replicas", "threads", "output_dir")


def parse(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    extra = set(cp.sections()) - {"experiment", "params"}
    if extra:
        raise ConfigError(f"{source}: unknown section(s) {sorted(extra)}")
    if "experiment" not in cp:
        raise ConfigError(f"{source}: missing [experiment] section")
    exp = cp["experiment"]
    bad = set(exp) - set(_EXPERIMENT_KEYS)
    if bad:
        raise ConfigError(f"{source}: [experiment] unknown key(s) {sorted(bad)}")
    if "command" not in exp:
        raise ConfigError(f"{source}: [experiment] missing 'command'")
    kw = {k: _literal(exp[k], f"{source}: [experiment] {k}") for k in exp}
    params = {}
    if "params" in cp:
        params = {k: _literal(v, f"{source}: [params] {k}") for k, v in cp["params"].items()}
    return ExperimentConfig(params=params, **kw)


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _fit_summary(curve, window, seed):
    try:
        fit = ex.fit_exponent(curve, window, seed=seed)
        return asdict(fit)
    except ex.FitError as exc:
        return {"error": str(exc)}


TAIL_HEADER = ["s", "estimate", "ci_lo", "ci_hi", "n_exceed"]


# --------------------------------------------------------------------------
# commands


def _run_limit_shape(cfg: ExperimentConfig):
    p = cfg.params
    rows = []
    for t, n in p["points"]:
        theta = solve_theta(t / n)
        rows.append((t, n, theta, free_energy(t, n)))
    c = shape_constants()
    lo, hi = shape_bounds_check(p["w_grid"])
    summary = {"mu": c.mu, "a_slope": c.a_slope, "theta_star": c.theta_star, "curvature_bounds": [lo, hi]}
    return ["t", "n", "theta", "free_energy"], rows, summary, True


def _run_identity(cfg: ExperimentConfig):
    p = cfg.params
    check = p["check"]
    if check == "rains-ejs":
        rep = idl.rains_ejs_check(
            (p["eta"], p["theta"], p["t"], p["n"]), cfg.replicas, cfg.seed, dt=p["dt"] or 0.0025, z=p["z"],
            threads=cfg.threads,
        )
    elif check == "stationary-mean":
        rep = idl.stationary_mean_check(p["theta"], p["t"], p["n"], cfg.replicas, cfg.seed, dt=p["dt"] or 0.005,
                                        z=p["z"], threads=cfg.threads)
    elif check == "burke":
        rep = idl.burke_increment_test(p["theta"], p["t"], p["n"], cfg.replicas, cfg.seed, s_grid=p["s_grid"],
                                       dt=p["dt"] or 0.01, z=p["z"], threads=cfg.threads)
    elif check == "dufresne":
        rep = idl.dufresne_test(p["nu"], cfg.replicas, seed=cfg.seed, dt=p["dt"] or 1e-3, threads=cfg.threads)
    else:
        raise ConfigError(f"unknown identity check {check!r}; expected rains-ejs, stationary-mean, burke or dufresne")
    rows = [(rep.name, rep.lhs, rep.rhs, rep.std_err, rep.n_samples, rep.verdict)]
    summary = json.loads(rep.to_json())
    return ["check", "lhs", "rhs", "std_err", "n_samples", "verdict"], rows, summary, rep.verdict


def _run_tail(cfg: ExperimentConfig):
    p = cfg.params
    curve = ex.tail_curve(p["model"], p["n"], p["t"], p["side"], p["s_values"], cfg.replicas, cfg.seed,
                          dt=p["dt"], theta=p["theta"], threads=cfg.threads)
    window = tuple(p["window"]) if p["window"] else ex.default_window(p["n"])
    summary = {"fit": _fit_summary(curve, window, cfg.seed), "window": list(window), "side": curve.side}
    return TAIL_HEADER, list(curve.rows()), summary, True


def _run_tf(cfg: ExperimentConfig):
    p = cfg.params
    res = ex.tf_experiment(p["n"], p["b_values"], cfg.replicas, cfg.seed, c=p["c"], t=p["t"], dt=p["dt"],
                           threads=cfg.threads)
    rows = [("annealed", *r) for r in res.annealed.rows()] + [("quenched_frequency", *r) for r in res.quenched_frequency.rows()]
    window = tuple(p["window"]) if p["window"] else None
    summary = {
        "fit": _fit_summary(res.annealed, window, cfg.seed),
        "window": list(window) if window else None,
        "c": res.c,
        "beyond_max_deviation": res.beyond_max,
        "annealed_nonincreasing": bool(np.all(np.diff(res.annealed.raw_log_probs) <= 0)),
    }
    return ["curve", "b", "estimate", "ci_lo", "ci_hi", "n_exceed"], rows, summary, True


def _run_exit(cfg: ExperimentConfig):
    p = cfg.params
    n = p["n"]
    theta = p["theta"]
    t = p["t"] if p["t"] is not None else n * float(psi(1, theta if theta is not None else 1.0))
    res = ex.exit_experiment(theta, t, n, p["x_values"], cfg.replicas, cfg.seed, dt=p["dt"],
                             truncation=p["truncation"], threads=cfg.threads)
    rows = []
    for c in (res.upper, res.lower, res.two_sided):
        rows.extend((c.side, *r) for r in c.rows())
    window = tuple(p["window"])
    summary = {
        "theta": res.theta,
        "center": res.center,
        "fit_two_sided": _fit_summary(res.two_sided, window, cfg.seed),
        "fit_upper": _fit_summary(res.upper, window, cfg.seed),
        "fit_lower": _fit_summary(res.lower, window, cfg.seed),
        "window": list(window),
    }
    return ["side", "x", "estimate", "ci_lo", "ci_hi", "n_exceed"], rows, summary, True


@dataclass(frozen=True)
class _WatermelonReplica:
    n: int
    k: int
    scale: float
    dt: float
    seed: int

    def __call__(self, i: int):
        env = generate(replica_seed(self.seed, i), GridSpec(0.0, float(self.n), self.dt, 0, self.n))
        return watermelon_bound_check(env, self.k, self.scale, self.n)


def _run_watermelon(cfg: ExperimentConfig):
    p = cfg.params
    geom = build_geometry(p["n"], p["k"], p["scale"])
    vals = map_replicas(_WatermelonReplica(p["n"], p["k"], p["scale"], p["dt"], cfg.seed), cfg.replicas, cfg.threads)
    rows = [(i, *v) for i, v in enumerate(vals)]
    min_slack = float(vals[:, 2].min())
    ok = min_slack >= -1e-9
    summary = {
        "min_slack": min_slack,
        "verdict": ok,
        "heights": list(geom.heights),
        "separation": geom.separation,
        "middle_width": geom.middle_width,
        "n_pieces": len(set(geom.pieces())),
    }
    return ["replica", "lhs", "rhs", "slack"], rows, summary, ok


def _run_convergence(cfg: ExperimentConfig):
    p = cfg.params
    n, dt = p["n"], p["dt"]
    levels = p["halvings"] + 1
    vals = np.empty((cfg.replicas, levels))
    for i in range(cfg.replicas):
        env = generate(replica_seed(cfg.seed, i), GridSpec(0.0, float(n), dt, 1, n))
        for h in range(levels):
            vals[i, h] = log_partition(env, LatticePoint(0.0, 1), LatticePoint(float(n), n))
            if h + 1 < levels:
                env = refine(env)
    rows = []
    for h in range(levels - 1):
        d = np.abs(vals[:, h + 1] - vals[:, h])
        rows.append((dt / 2**h, dt / 2 ** (h + 1), math.fsum(d) / cfg.replicas, float(d.max())))
    means = [r[2] for r in rows]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    return ["dt", "dt_half", "mean_abs_diff", "max_abs_diff"], rows, {"decreasing": decreasing}, True


RUNNERS = {
    "limit-shape": _run_limit_shape,
    "identity": _run_identity,
    "tail": _run_tail,
    "tf": _run_tf,
    "exit": _run_exit,
    "watermelon": _run_watermelon,
    "convergence": _run_convergence,
}


def run(config: ExperimentConfig) -> int:
    """Execute ``config`` and write its artifacts; returns the exit status."""
    cfg = config.resolved()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = serialize(cfg)
    header, rows, summary, verdict = RUNNERS[cfg.command](cfg)
    _write_csv(out / "results.csv", header, rows)
    summary = {
        "command": cfg.command,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        # threads and output_dir do not change results, so they stay out of the hash
        "config_hash": hashlib.sha256(repr((cfg.command, sorted(cfg.params.items()), cfg.seed, cfg.replicas)).encode()).hexdigest(),
        "verdict": bool(verdict),
        **summary,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    (out / "resolved_config.ini").write_text(text)
    return 0 if verdict else 2


# --------------------------------------------------------------------------
# argument parsing


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oylab", description="O'Connell-Yor polymer laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="INI file with [experiment] and [params] sections")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--threads", type=int, help="worker processes (default: $OY_THREADS or 1)")
        sp.add_argument("--output-dir")
        for key, default in PARAMS[cmd].items():
            sp.add_argument(_flag(key), dest=f"param_{key}", metavar="VALUE", help=f"default: {default!r}")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        base = parse(text, source=str(path))
        if base.command != args.command:
            raise ConfigError(f"{path}: config is for {base.command!r}, not {args.command!r}")
    else:
        base = ExperimentConfig(args.command, {}, threads=resolve_threads(None))
    params = dict(base.params)
    for key in PARAMS[args.command]:
        val = getattr(args, f"param_{key}")
        if val is not None:
            params[key] = _literal(val, _flag(key))
    return ExperimentConfig(
        args.command,
        params,
        args.seed if args.seed is not None else base.seed,
        args.replicas if args.replicas is not None else base.replicas,
        resolve_threads(args.threads) if args.threads is not None else base.threads,
        args.output_dir if args.output_dir is not None else base.output_dir,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"oylab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
