"""Command-line entry point: TOML run configs, command dispatch and record output.

Records are single lines of ``key=value`` fields, in a fixed order per
record type.  Floats use the shortest round-trip representation, vectors
and matrices are bracketed comma lists, and minus infinity is ``-inf``.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import tomli

from . import catalog
from . import distortion as dist
from . import exprparse as ep
from . import geodesics as gd
from . import geometry as geo
from . import regions as rg
from . import tbm
from .errors import ConfigError, TbmError

log = logging.getLogger("spacetime_tbm")

COMMANDS = ("curvature", "geodesic", "separation", "distortion-table", "check-ode", "check-tbm",
            "counterexample", "lw-distance")

SPACETIME_KEYS = {"catalog", "n", "g", "psi", "N", "weight", "weight_slope", "chart_lo", "chart_hi",
                  "future"}
NUMERICS_KEYS = {"h", "ode_rtol", "ode_atol", "voxel_side", "pair_samples", "theta_samples", "seed",
                 "threads", "samples"}
TASK_KEYS = {"command", "x0", "v0", "y", "K", "N", "eps", "lam", "delta", "t", "ts", "theta", "q",
             "mu", "nu", "eps_floor", "lam0", "levels", "search_lo", "search_hi", "scan_points"}

EXIT_OK, EXIT_NONE, EXIT_INCONCLUSIVE, EXIT_ERROR = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class NumericsConfig:
    h: Optional[float] = None
    ode_rtol: float = gd.ODE_RTOL
    ode_atol: float = gd.ODE_ATOL
    voxel_side: Optional[float] = None
    pair_samples: Optional[int] = None
    theta_samples: int = 4096
    samples: int = 33
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class RunConfig:
    st: geo.WeightedSpacetime
    spacetime: dict
    numerics: NumericsConfig
    task: dict = field(default_factory=dict)
    command: Optional[str] = None


def _unknown(section: str, got: dict, allowed: set) -> None:
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigError(f"{section}.{extra[0]}", "unknown key")


def _vector(key: str, val, n: int) -> np.ndarray:
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a list of numbers") from None
    if arr.shape != (n,):
        raise ConfigError(key, f"expected {n} numbers, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(key, "entries must be finite")
    return arr


def _points(key: str, val, n: int) -> np.ndarray:
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a list of points") from None
    if arr.ndim != 2 or arr.shape[1] != n or len(arr) == 0:
        raise ConfigError(key, f"expected a non-empty list of {n}-vectors")
    return arr


def _number(key: str, val, lo=-math.inf, hi=math.inf, open_lo=False, open_hi=False) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(key, "expected a number")
    v = float(val)
    if not (v > lo if open_lo else v >= lo) or not (v < hi if open_hi else v <= hi):
        lb = "(" if open_lo else "["
        rb = ")" if open_hi else "]"
        raise ConfigError(key, f"value {v!r} outside {lb}{lo}, {hi}{rb}")
    return v


def _integer(key: str, val, lo: int = 0) -> int:
    if isinstance(val, bool) or not isinstance(val, int) or val < lo:
        raise ConfigError(key, f"expected an integer >= {lo}")
    return int(val)


def build_spacetime(sec: dict) -> geo.WeightedSpacetime:
    _unknown("spacetime", sec, SPACETIME_KEYS)
    N = sec.get("N")
    if N is not None:
        N = _number("spacetime.N", N)
    try:
        if "catalog" in sec:
            if "g" in sec or "psi" in sec or "n" in sec:
                raise ConfigError("spacetime.catalog", "catalog entries take no explicit g, psi or n")
            st = catalog.spacetime(sec["catalog"], N, sec.get("weight", "linear"),
                                   float(sec.get("weight_slope", 1.0)),
                                   sec.get("chart_lo"), sec.get("chart_hi"))
        else:
            if "g" not in sec:
                raise ConfigError("spacetime.g", "either catalog or g is required")
            g = sec["g"]
            n = _integer("spacetime.n", sec.get("n", len(g)), 2)
            if not isinstance(g, list) or len(g) != n or any(
                    not isinstance(r, list) or len(r) != n for r in g):
                raise ConfigError("spacetime.g", f"expected an {n} x {n} list of expressions")
            try:
                ep.parse(str(sec.get("psi", "0")), n)
            except TbmError as exc:
                raise ConfigError("spacetime.psi", str(exc)) from None
            st = catalog.from_strings(n, g, sec.get("psi", "0"), N, sec.get("chart_lo"),
                                      sec.get("chart_hi"), "custom", sec.get("future"))
    except ConfigError:
        raise
    except TbmError as exc:
        key = {"invalid_dimension_param": "spacetime.N", "syntax_error": "spacetime.g",
               "unknown_symbol": "spacetime.g", "signature_error": "spacetime.g"}.get(
            exc.code, "spacetime")
        raise ConfigError(key, str(exc)) from None
    _check_signature(st)
    return st


def _check_signature(st: geo.WeightedSpacetime, samples: int = 16) -> None:
    """Signature and time orientation on the chart centre, corners and Sobol points."""
    lo, hi = np.asarray(st.chart_lo), np.asarray(st.chart_hi)
    # stay off the boundary so that finite differences remain inside the chart
    lo, hi = lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo)
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    pts = np.concatenate([((lo + hi) / 2)[None], corners, lo + (hi - lo) * gd.sobol(st.n, samples)])
    for x in pts:
        try:
            geo.metric_at(st, x)
            ok = bool(geo.is_future_causal(st, x, geo.future_vector(st, x)))
        except TbmError as exc:
            raise ConfigError("spacetime.g", f"{exc} at x={_fmt(x)}") from None
        if not ok:
            raise ConfigError("spacetime.future", f"future frame field not timelike at x={_fmt(x)}")


def build_numerics(sec: dict, seed=None, threads=None) -> NumericsConfig:
    _unknown("numerics", sec, NUMERICS_KEYS)
    kw: dict[str, Any] = {}
    for k in ("h", "ode_rtol", "ode_atol", "voxel_side"):
        if k in sec:
            kw[k] = _number(f"numerics.{k}", sec[k], 0.0, open_lo=True)
    for k, lo in (("pair_samples", 1), ("theta_samples", 2), ("samples", 2), ("seed", 0),
                  ("threads", 1)):
        if k in sec:
            kw[k] = _integer(f"numerics.{k}", sec[k], lo)
    if seed is not None:
        kw["seed"] = _integer("--seed", seed, 0)
    if threads is not None:
        kw["threads"] = _integer("--threads", threads, 1)
    return NumericsConfig(**kw)


def _unit_future(key: str, st, x, v) -> None:
    gm = geo.metric_at(st, x)
    q = float(v @ gm @ v)
    if not bool(geo.is_future_causal(st, x, v)) or abs(q - 1.0) > tbm.UNIT_TOL:
        raise ConfigError(key, f"must be future unit timelike at x0 (g(v0,v0)={q:.12g})")


def validate_task(st: geo.WeightedSpacetime, task: dict, command: str) -> dict:
    """Defaults plus the preconditions of the target operation."""
    _unknown("task", task, TASK_KEYS)
    n = st.n
    out = dict(task)
    centre = (np.asarray(st.chart_lo) + np.asarray(st.chart_hi)) / 2
    out["x0"] = _vector("task.x0", task.get("x0", centre), n)
    if not st.in_chart(out["x0"]):
        raise ConfigError("task.x0", "outside the chart")
    if "v0" in task or command in ("geodesic", "check-ode", "check-tbm"):
        out["v0"] = _vector("task.v0", task.get("v0", np.eye(n)[0]), n)
    if "N" in task:
        out["N"] = _number("task.N", task["N"], 1.0, open_lo=True)
    if "K" in task or command in ("distortion-table", "check-ode", "check-tbm", "counterexample"):
        out["K"] = _number("task.K", task.get("K", 0.0))
    if command in ("check-ode", "check-tbm"):
        _unit_future("task.v0", st, out["x0"], out["v0"])
        lams = task.get("lam", 0.1)
        lams = lams if isinstance(lams, list) else [lams]
        out["lam"] = [_number("task.lam", v, 0.0, open_lo=True) for v in lams]
    if command == "check-ode":
        out["eps"] = _number("task.eps", task.get("eps", 0.4), 0.0)
    if command == "check-tbm":
        out["delta"] = _number("task.delta", task.get("delta", out["lam"][0] ** 3), 0.0, open_lo=True)
        ts = task.get("ts", [task.get("t", 0.5)])
        out["ts"] = [_number("task.ts", v, 0.0, 1.0) for v in ts]
    if command == "geodesic":
        out["t"] = _number("task.t", task.get("t", 1.0), 0.0, open_lo=True)
    if command == "separation":
        if "y" not in task:
            raise ConfigError("task.y", "required for separation")
        out["y"] = _vector("task.y", task["y"], n)
        if not st.in_chart(out["y"]):
            raise ConfigError("task.y", "outside the chart")
    if command == "distortion-table":
        out["theta"] = _number("task.theta", task.get("theta", 1.0), 0.0)
        ts = task.get("ts", [i / 10 for i in range(11)])
        out["ts"] = [_number("task.ts", v, 0.0, 1.0) for v in ts]
    if command == "counterexample":
        out["eps_floor"] = _number("task.eps_floor", task.get("eps_floor", 0.4), 0.0)
        out["lam0"] = _number("task.lam0", task.get("lam0", 0.2), 0.0, open_lo=True)
        out["levels"] = _integer("task.levels", task.get("levels", 5), 1)
        out["t"] = _number("task.t", task.get("t", 0.5), 0.0, 1.0, open_lo=True, open_hi=True)
        out["scan_points"] = _integer("task.scan_points", task.get("scan_points", 32), 1)
        if ("search_lo" in task) != ("search_hi" in task):
            raise ConfigError("task.search_lo", "search_lo and search_hi go together")
        if "search_lo" in task:
            out["search_lo"] = _vector("task.search_lo", task["search_lo"], n)
            out["search_hi"] = _vector("task.search_hi", task["search_hi"], n)
    if command == "lw-distance":
        for k in ("mu", "nu"):
            if k not in task:
                raise ConfigError(f"task.{k}", "required for lw-distance")
            out[k] = _points(f"task.{k}", task[k], n)
        if len(out["mu"]) != len(out["nu"]):
            raise ConfigError("task.nu", "mu and nu need equally many atoms")
        out["q"] = _number("task.q", task.get("q", 0.5), 0.0, 1.0, open_lo=True, open_hi=True)
    return out


def config_from_dict(data: dict, command: Optional[str] = None, seed=None, threads=None) -> RunConfig:
    _unknown("", data, {"spacetime", "numerics", "task"})
    if "spacetime" not in data:
        raise ConfigError("spacetime", "section is required")
    sections = {k: data.get(k, {}) for k in ("spacetime", "numerics", "task")}
    for k, v in sections.items():
        if not isinstance(v, dict):
            raise ConfigError(k, "expected a table")
    st = build_spacetime(sections["spacetime"])
    num = build_numerics(sections["numerics"], seed, threads)
    cmd = command or sections["task"].get("command")
    if cmd is not None and cmd not in COMMANDS:
        raise ConfigError("task.command", f"unknown command {cmd!r}")
    task = validate_task(st, sections["task"], cmd) if cmd else dict(sections["task"])
    return RunConfig(st, dict(sections["spacetime"]), num, task, cmd)


def load_config(path, command: Optional[str] = None, seed=None, threads=None) -> RunConfig:
    """Parse and validate a TOML run file."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("--config", f"malformed TOML: {exc}") from None
    return config_from_dict(data, command, seed, threads)


# ---------------------------------------------------------------------------
# records

def _fmt(v) -> str:
    if v is None:
        return "-inf"
    if dist.is_inf(v):
        return "inf"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ",".join(_fmt(x) for x in (v.tolist() if isinstance(v, np.ndarray) else v)) + "]"
    s = str(v)
    if not s or any(c.isspace() or c in '="[],' for c in s):
        return json.dumps(s)
    return s


def format_record(kind: str, fields: list[tuple[str, Any]]) -> str:
    return " ".join([f"record={kind}"] + [f"{k}={_fmt(v)}" for k, v in fields])


def error_record(exc: Exception, command: Optional[str]) -> str:
    code = getattr(exc, "code", type(exc).__name__)
    fields = [("command", command or "-"), ("code", code), ("type", type(exc).__name__)]
    if isinstance(exc, ConfigError):
        fields.append(("key", exc.key))
    fields.append(("message", str(exc)))
    return format_record("error", fields)


# ---------------------------------------------------------------------------
# commands

def _curvature(cfg: RunConfig):
    st, task = cfg.st, cfg.task
    rep = geo.curvature_report(st, task["x0"], cfg.numerics.h)
    fields = [("spacetime", st.name), ("x", task["x0"]), ("h", rep.h), ("ricci", rep.ricci),
              ("be_ricci", rep.be_ricci), ("christoffels", rep.christoffels)]
    if "v0" in task:
        fields.append(("be_ricci_v", float(np.atleast_1d(
            geo.bakry_emery_ricci(st, task["x0"], task["v0"], cfg.numerics.h))[0])))
    summary = [f"Ric at {_fmt(task['x0'])}:", *("  " + " ".join(f"{v: .6e}" for v in r)
                                                 for r in rep.ricci)]
    return [format_record("curvature", fields)], summary, EXIT_OK


def _geodesic(cfg: RunConfig):
    st, task, num = cfg.st, cfg.task, cfg.numerics
    ts = np.linspace(0.0, task["t"], num.samples)
    res = gd.integrate(st, task["x0"], task["v0"], ts, rtol=num.ode_rtol, atol=num.ode_atol)
    xs, vs = res["x"][:, 0], res["v"][:, 0]
    sol = gd.GeodesicSolution(ts, xs, vs)
    ctype, orient = geo.causal_type(st, task["x0"], task["v0"])
    lines = [format_record("geodesic_sample", [("t", t), ("x", x), ("v", v)])
             for t, x, v in zip(ts, xs, vs)]
    lag = sol.lagrangian(st)
    lines.append(format_record("geodesic", [
        ("x0", task["x0"]), ("v0", task["v0"]), ("t", task["t"]), ("causal", ctype),
        ("orientation", orient), ("end", xs[-1]), ("max_residual", float(np.max(sol.residual(st)))),
        ("lagrangian_drift", float(np.max(np.abs(lag - lag[0]))))]))
    return lines, [f"geodesic {ctype}/{orient}: end {_fmt(xs[-1])}"], EXIT_OK


def _separation(cfg: RunConfig):
    st, task = cfg.st, cfg.task
    sv = gd.time_separation(st, task["x0"], task["y"])
    line = format_record("separation", [("x", task["x0"]), ("y", task["y"]), ("ell", sv.value),
                                        ("ell_plus", sv.plus), ("class", sv.classification)])
    return [line], [f"ell = {_fmt(sv.value)} ({sv.classification})"], EXIT_OK


def _distortion_table(cfg: RunConfig):
    task = cfg.task
    N = task.get("N", cfg.st.N)
    rows = dist.distortion_table(task["K"], N, task["theta"], task["ts"])
    lines = [format_record("distortion", [("K", task["K"]), ("N", N), ("theta", task["theta"]),
                                          ("t", r["t"]), ("sigma", r["sigma"]), ("tau", r["tau"])])
             for r in rows]
    table = ["t,sigma,tau"] + [f"{_fmt(r['t'])},{_fmt(r['sigma'])},{_fmt(r['tau'])}" for r in rows]
    return lines, table, EXIT_OK


def _check_ode(cfg: RunConfig):
    st, task = cfg.st, cfg.task
    tf = tbm.build_transport_field(st, task["x0"], task["v0"], reach=1.5 * max(task["lam"]))
    lines, summary = [], []
    for lam in task["lam"]:
        rep = tbm.check_distortion_ode(st, tf, lam, task["K"], task["eps"])
        rec = rep.as_record()
        lines.append(format_record("check_ode", [("alpha", tf.alpha)] + list(rec.items())))
        summary.append(f"lam={lam:g}: certified={rep.certified} sup|E|={rep.sup_error:.3e}")
    return lines, summary, EXIT_OK


def _check_tbm(cfg: RunConfig):
    st, task, num = cfg.st, cfg.task, cfg.numerics
    lam = task["lam"][0]
    tf = tbm.build_transport_field(st, task["x0"], task["v0"], reach=1.5 * lam)
    A = rg.eigen_cube(st, tf.x0, tf.v0, task["delta"])
    B = rg.map_region(st, A, tbm.transport_map(tf, lam))
    res = tbm.check_tbm(st, A, B, task["K"], task.get("N"), task["ts"], num.voxel_side,
                        num.pair_samples, num.theta_samples, num.seed, num.threads)
    lines = [format_record("check_tbm", [("lam", lam), ("delta", task["delta"])]
                           + list(r.as_record().items())) for r in res]
    summary = [f"t={r.t:g}: {r.verdict} (left {r.left:.9g}, right {r.right:.9g})" for r in res]
    return lines, summary, EXIT_OK


def _counterexample(cfg: RunConfig):
    st, task, num = cfg.st, cfg.task, cfg.numerics
    box = (task["search_lo"], task["search_hi"]) if "search_lo" in task else None
    rep = tbm.find_counterexample(st, task["K"], task.get("N"), box, task["eps_floor"], task["lam0"],
                                  task["levels"], task["t"], num.pair_samples, num.theta_samples,
                                  task["scan_points"], num.seed, num.threads)
    lines = []
    for tr in rep.trials:
        lines.append(format_record("trial", list(tr.items())))
    c = rep.candidate
    fields = [("status", rep.status), ("K", task["K"]), ("N", task.get("N", st.N)),
              ("x0", None if c is None else c.x0), ("v0", None if c is None else c.v0),
              ("be_ricci", None if c is None else c.ricci), ("lam", rep.lam), ("delta", rep.delta),
              ("best_margin", rep.best_margin)]
    if c is None:
        fields[3:6] = [("x0", "none"), ("v0", "none"), ("be_ricci", "none")]
    if rep.lam is None:
        fields[6:8] = [("lam", "none"), ("delta", "none")]
    if rep.result is not None:
        r = rep.result
        fields += [("left", r.left), ("right", r.right), ("certified_margin", r.certified_margin),
                   ("theta", r.theta)]
    lines.append(format_record("counterexample", fields))
    return lines, [f"counterexample search: {rep.status}"], rep.exit_code


def _lw_distance(cfg: RunConfig):
    task = cfg.task
    prob = tbm.lw_distance_discrete(cfg.st, task["mu"], task["nu"], task["q"])
    line = format_record("lw_distance", [
        ("q", task["q"]), ("atoms", len(task["mu"])), ("value", prob.value),
        ("assignment", "none" if prob.assignment is None else list(prob.assignment))])
    return [line], [f"l_q = {_fmt(prob.value)}"], EXIT_OK


_DISPATCH = {
    "curvature": _curvature,
    "geodesic": _geodesic,
    "separation": _separation,
    "distortion-table": _distortion_table,
    "check-ode": _check_ode,
    "check-tbm": _check_tbm,
    "counterexample": _counterexample,
    "lw-distance": _lw_distance,
}


def run_command(cfg: RunConfig, command: Optional[str] = None):
    """Run one command; returns ``(exit_status, records, summary_lines)``.

    Module errors become a single error record and exit status 3.
    """
    command = command or cfg.command
    if command not in _DISPATCH:
        exc = ConfigError("task.command", f"unknown command {command!r}")
        return EXIT_ERROR, [error_record(exc, command)], [str(exc)]
    if cfg.command != command:
        try:
            cfg = RunConfig(cfg.st, cfg.spacetime, cfg.numerics,
                            validate_task(cfg.st, cfg.task, command), command)
        except ConfigError as exc:
            return EXIT_ERROR, [error_record(exc, command)], [str(exc)]
    try:
        lines, summary, status = _DISPATCH[command](cfg)
    except (TbmError, ValueError, ArithmeticError) as exc:
        log.debug("command failed", exc_info=True)
        return EXIT_ERROR, [error_record(exc, command)], [f"error: {exc}"]
    return status, lines, summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="spacetime_tbm", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=COMMANDS,
                    help="defaults to task.command from the config")
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--out", metavar="PATH", help="record file (default: standard output)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.command, args.seed, args.threads)
        if cfg.command is None:
            raise ConfigError("task.command", "no command given")
        log.info("spacetime %s, n=%d, N=%g", cfg.st.name, cfg.st.n, cfg.st.N)
        status, lines, summary = run_command(cfg)
    except ConfigError as exc:
        status, lines, summary = EXIT_ERROR, [error_record(exc, args.command)], [f"error: {exc}"]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        for s in summary:
            print(s)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
