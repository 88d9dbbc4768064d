"""Command-line front end.

    eigendrift SUBCOMMAND [--config PATH] [--D X] [--grid N] [--out PATH]
               [--form auto|direct|sym|both] [--format csv|json]

Configs are "key = value" lines under [problem], [stream], [sweep] and
[output] headers; see README.md for the full grammar.  Data goes to --out (or
stdout), diagnostics to stderr.  Exit codes: 0 success, 1 usage or config
error, 2 numerical failure, 3 cross-check failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import asymptotics as asy
from . import eigen
from . import expr as ex
from . import stream as st
from .model import BoundaryCondition, Field, Grid1D, Grid2D, ProblemSpec, graded_grid

log = logging.getLogger("eigendrift")

SUBCOMMANDS = ("eig", "sweep", "limit0", "limitinf", "classify-robin", "rate-fit",
               "stream-sim", "stream-classify", "stream-limits")

FACE_KEYS = ("left", "right", "bottom", "top")
PROBLEM_KEYS = {"dimension", "D", "alpha", "m", "V", "bc", "domain", "kinks", "grid", "scheme"} | set(FACE_KEYS) | {
    f"{f}.{k}" for f in FACE_KEYS for k in ("c", "k", "beta", "per_D")}
STREAM_KEYS = {"D", "q", "r", "downstream", "grid", "u0", "T", "dt"}
SWEEP_KEYS = {"D", "n0", "n_max", "rel_tol", "form", "workers"}
OUTPUT_KEYS = {"path", "format"}
SECTIONS = {"problem": PROBLEM_KEYS, "stream": STREAM_KEYS, "sweep": SWEEP_KEYS, "output": OUTPUT_KEYS}


class UsageError(Exception):
    """Bad command line or config; exit code 1."""


# --------------------------------------------------------------------------
# config

def read_config(path: str) -> dict:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=None, interpolation=None,
                                   default_section="__none__")
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    except configparser.Error as err:
        raise UsageError(f"config syntax: {err}") from err
    return parse_config({s: dict(cp[s]) for s in cp.sections()})


def parse_config(sections: dict) -> dict:
    for name, body in sections.items():
        if name not in SECTIONS:
            raise UsageError(f"unknown section [{name}]")
        unknown = sorted(set(body) - SECTIONS[name])
        if unknown:
            raise UsageError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    if ("problem" in sections) == ("stream" in sections):
        raise UsageError("config needs exactly one of [problem] or [stream]")
    return sections


def _float(body, key, default=None):
    if key not in body:
        if default is None:
            raise UsageError(f"missing key {key}")
        return default
    try:
        return float(body[key])
    except ValueError as err:
        raise UsageError(f"{key}: not a number: {body[key]!r}") from err


def _int(body, key, default=None):
    v = _float(body, key, default)
    if v != int(v):
        raise UsageError(f"{key}: not an integer")
    return int(v)


def _floats(text: str, key: str):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as err:
        raise UsageError(f"{key}: expected numbers, got {text!r}") from err


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _condition(body, face, default):
    kind = body.get(face, default).strip().lower()
    if kind in ("dirichlet", "neumann"):
        extra = [k for k in ("c", "k", "beta", "per_D") if f"{face}.{k}" in body]
        if extra:
            raise UsageError(f"{face}: {kind} takes no data, got {extra}")
        return BoundaryCondition(kind)
    if kind != "robin":
        raise UsageError(f"{face}: unknown boundary kind {kind!r}")
    if f"{face}.beta" in body:
        k = _float(body, f"{face}.k", 1.0)
        per = _bool(body.get(f"{face}.per_D", "no"))
        return BoundaryCondition.robin(k=k, beta=ex.parse(body[f"{face}.beta"]), per_diffusion=per)
    if f"{face}.c" not in body:
        raise UsageError(f"{face}: robin needs {face}.c or {face}.beta")
    return BoundaryCondition.robin(c=_float(body, f"{face}.c"))


def build_problem(body: dict, D_override=None) -> ProblemSpec:
    dim = _int(body, "dimension", 1)
    if dim not in (1, 2):
        raise UsageError("dimension must be 1 or 2")
    if "m" not in body:
        raise UsageError("missing key m")
    dom = _floats(body.get("domain", "0 1" if dim == 1 else "0 1 0 1"), "domain")
    if len(dom) != 2 * dim:
        raise UsageError(f"domain needs {2 * dim} numbers")
    faces = FACE_KEYS[:2] if dim == 1 else FACE_KEYS
    if dim == 1 and any(f in body for f in ("bottom", "top")):
        raise UsageError("bottom/top faces in a 1D problem")
    default = body.get("bc", "dirichlet")
    bc = {f: _condition(body, f, default) for f in faces}
    D = D_override if D_override is not None else _float(body, "D", 1.0)
    kinks = _floats(body.get("kinks", ""), "kinks")
    spec = ProblemSpec(dim, D, _float(body, "alpha", 1.0), ex.parse(body["m"]),
                       ex.parse(body.get("V", "0")), bc,
                       tuple((dom[2 * i], dom[2 * i + 1]) for i in range(dim)), tuple(kinks))
    return spec


def build_stream(body: dict, D_override=None) -> st.StreamSpec:
    for key in ("q", "r"):
        if key not in body:
            raise UsageError(f"missing key {key}")
    D = D_override if D_override is not None else _float(body, "D", 1e-3)
    return st.StreamSpec(D, ex.parse(body["q"]), ex.parse(body["r"]), body.get("downstream", "NF"))


# --------------------------------------------------------------------------
# formatting

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj, indent=0) -> str:
    """Deterministic JSON; floats with 17 significant digits, non-finite as strings."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else '"' + fmt(x) + '"'
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def write_output(text: str, path: str | None):
    """Atomic write: temp file in the target directory, then rename."""
    if path is None or path == "-":
        try:
            sys.stdout.write(text)
            sys.stdout.flush()
        except BrokenPipeError:  # reader went away, e.g. piped into head
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return
    target = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(target), prefix=".tmp-", suffix=os.path.basename(target))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# commands

def _grid(spec: ProblemSpec, n: int):
    if spec.dimension == 2:
        (ax, bx), (ay, by) = spec.domain
        return Grid2D.uniform(ax, bx, n, ay, by, n)
    (a, b), = spec.domain
    try:
        return graded_grid(a, b, n, asy.layers_for(spec), avoid=spec.kinks)
    except ValueError:
        return graded_grid(a, b, n, (), avoid=spec.kinks)


def _report_json(rep: asy.AsymptoticReport) -> dict:
    return {"limit": rep.limit, "location": list(rep.location) if rep.location else None,
            "rule": rep.rule, "warnings": list(rep.warnings),
            "candidates": [{"kind": c.kind, "location": list(c.location), "V": c.V,
                            "curvature": c.curvature, "correction": c.correction, "total": c.total}
                           for c in rep.candidates]}


def _problem(cfg, args):
    if "problem" not in cfg:
        raise UsageError(f"{args.command} needs a [problem] section")
    return build_problem(cfg["problem"], args.D)


def _stream(cfg, args):
    if "stream" not in cfg:
        raise UsageError(f"{args.command} needs a [stream] section")
    return build_stream(cfg["stream"], args.D)


def _grid_size(args, body, default):
    if args.grid is not None:
        return args.grid
    return _int(body, "grid", default)


def cmd_eig(cfg, args):
    spec = _problem(cfg, args)
    n = _grid_size(args, cfg["problem"], 512 if spec.dimension == 1 else 129)
    res = eigen.solve(spec, _grid(spec, n), args.form or "auto", cfg["problem"].get("scheme", "fitted"))
    out = {"lambda": res.lam, "residual": res.residual, "form": res.form.label(), "grid_n": res.grid_n}
    if res.companion is not None:
        out["companion_lambda"] = res.companion.lam
        out["discrepancy"] = res.discrepancy
    if args.format == "csv":
        return to_csv(list(out), [list(out.values())]), 0
    return to_json(out) + "\n", 0


def _sweep_policy(cfg, args):
    body = cfg.get("sweep", {})
    form = args.form or body.get("form", "auto")
    return asy.GridPolicy(n0=_int(body, "n0", 256), n_max=_int(body, "n_max", 1 << 17),
                          rel_tol=_float(body, "rel_tol", 1e-3), form=form)


def cmd_sweep(cfg, args):
    body = cfg.get("sweep")
    if not body or "D" not in body:
        raise UsageError("sweep needs [sweep] D = list of diffusion values")
    Ds = _floats(body["D"], "D")
    workers = _int(body, "workers", 0) or None
    policy = _sweep_policy(cfg, args)
    if "stream" in cfg:
        s = build_stream(cfg["stream"])
        if args.form is None and "form" not in body:
            policy = asy.GridPolicy(policy.n0, policy.n_max, policy.rel_tol, "direct")
        table = st.sweep(s, Ds, policy, workers)
    else:
        table = asy.sweep(build_problem(cfg["problem"]), Ds, policy, workers)
    rows = [(r.D, r.grid_n, r.lam, r.residual, r.form) for r in table.rows]
    code = 2 if any(r.error for r in table.rows) else 0
    if args.format == "json":
        return to_json([{"D": r.D, "grid_n": r.grid_n, "lambda": r.lam, "residual": r.residual,
                         "form": r.form, "error": r.error} for r in table.rows]) + "\n", code
    return to_csv(["D", "grid_n", "lambda", "residual", "form"], rows), code


def cmd_limit0(cfg, args):
    rep = asy.limit_small_D(_problem(cfg, args))
    for w in rep.warnings:
        log.warning(w)
    if args.format == "csv":
        return to_csv(["kind", "location", "V", "curvature", "correction", "total"],
                      [(c.kind, " ".join(fmt(v) for v in c.location), c.V, c.curvature, c.correction, c.total)
                       for c in rep.candidates]), 0
    return to_json(_report_json(rep)) + "\n", 0


def cmd_limitinf(cfg, args):
    spec = _problem(cfg, args)
    rep = asy.limit_large_D(spec, _grid_size(args, cfg["problem"], 800))
    out = {"verdict": rep.verdict, "limit": rep.limit, "mu1": rep.mu1, "certified": rep.certified,
           "tolerance_based": rep.tolerance_based, "value": rep.value,
           "unweighted_value": rep.gradient_weighted_value}
    return to_json(out) + "\n", 0


def _robin_constant(bc: BoundaryCondition):
    if bc.kind == "neumann":
        return 0.0
    if bc.kind == "robin" and bc.beta is None:
        return bc.c
    raise UsageError("classify-robin needs constant Robin or Neumann faces (robin with .c)")


def cmd_classify_robin(cfg, args):
    spec = _problem(cfg, args)
    if spec.dimension != 1:
        raise UsageError("classify-robin is 1D")
    k0, k1 = _robin_constant(spec.bc["left"]), _robin_constant(spec.bc["right"])
    n = _grid_size(args, cfg["problem"], 400)
    if args.map:
        ks = np.linspace(-3.0, 3.0, args.map)
        rows = []
        for a in ks:
            for b in ks:
                mu = asy.mu1_robin_line(a, b, n)
                rows.append((a, b, mu, int(np.sign(mu)), asy.mu1_sign_algebraic(a, b)))
        return to_csv(["k0", "k1", "mu1", "sign_numeric", "sign_algebraic"], rows), 0
    mu = asy.mu1_robin_line(k0, k1, n)
    sign = asy.mu1_sign_algebraic(k0, k1)
    verdict = {1: asy.PLUS_INFINITY, -1: asy.MINUS_INFINITY, 0: asy.FINITE}[sign]
    out = {"k0": k0, "k1": k1, "mu1": mu, "sign_algebraic": sign, "verdict": verdict}
    return to_json(out) + "\n", 0


def cmd_rate_fit(cfg, args):
    if not args.table:
        raise UsageError("rate-fit needs a sweep CSV path")
    try:
        with open(args.table, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as err:
        raise UsageError(f"cannot read {args.table}: {err}") from err
    if not rows or not {"D", "lambda"} <= set(rows[0]):
        raise UsageError("sweep CSV must have D and lambda columns")
    table = [(float(r["D"]), float(r["lambda"])) for r in rows]
    fit = asy.fit_rate(table, args.model)
    for d in fit.dropped:
        log.warning(d)
    out = {"model": fit.model, "slope": fit.slope, "intercept": fit.intercept,
           "r_squared": fit.r_squared, "rows_used": fit.used, "dropped": list(fit.dropped)}
    return to_json(out) + "\n", 0


def cmd_stream_sim(cfg, args):
    s = _stream(cfg, args)
    body = cfg["stream"]
    n = _grid_size(args, body, 400)
    grid = st.default_grid(s, n)
    u0 = ex.parse(body.get("u0", "0.01"))
    vals = np.asarray(ex.evaluate(u0, {"x": grid.nodes}), float) * np.ones(len(grid))
    T = _float(body, "T", 50.0)
    dt = _float(body, "dt", st.default_step(s, grid, float(np.max(vals))))
    traj = st.simulate(s, Field(grid, vals), T, dt)
    log.info("final max %s, final min %s, %s", fmt(traj.final_max), fmt(traj.final_min), traj.flag)
    return traj.to_csv(), 0


def cmd_stream_classify(cfg, args):
    s = _stream(cfg, args)
    n = _grid_size(args, cfg["stream"], 1024)
    p = st.classify_persistence(s, st.default_grid(s, n), args.form or "direct")
    return to_json({"verdict": p.verdict, "lambda": p.lam, "borderline": p.borderline,
                    "grid_n": p.result.grid_n}) + "\n", 0


def cmd_stream_limits(cfg, args):
    s = _stream(cfg, args)
    lims = st.small_D_limits(s)
    pattern = st.buffer_pattern(s)
    out = {"case": pattern.case, "buffers": [list(b) for b in pattern.buffers]}
    for ds, lim in lims.items():
        out[ds] = {"limit": lim.limit, "closed_form": lim.closed_form, "report": _report_json(lim.report)}
    return to_json(out) + "\n", 0


COMMANDS = {"eig": cmd_eig, "sweep": cmd_sweep, "limit0": cmd_limit0, "limitinf": cmd_limitinf,
            "classify-robin": cmd_classify_robin, "rate-fit": cmd_rate_fit,
            "stream-sim": cmd_stream_sim, "stream-classify": cmd_stream_classify,
            "stream-limits": cmd_stream_limits}


# --------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eigendrift", description="Principal eigenvalues of drift operators and their limits.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("table", nargs="?", help="sweep CSV (rate-fit only)")
    p.add_argument("--config")
    p.add_argument("--D", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--out")
    p.add_argument("--form", choices=("auto", "direct", "sym", "both"))
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--model", default="powerlaw", choices=("powerlaw", "expinverse"))
    p.add_argument("--map", type=int, default=0, help="classify-robin: NxN map over [-3, 3]^2")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args = make_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        if args.D is not None and not args.D > 0:
            raise UsageError("--D must be positive")
        if args.grid is not None and args.grid < 2:
            raise UsageError("--grid must be at least 2")
        if args.command == "rate-fit":
            cfg = {}
        else:
            if not args.config:
                raise UsageError(f"{args.command} needs --config")
            cfg = read_config(args.config)
        out = cfg.get("output", {})
        args.out = args.out or out.get("path")
        args.format = args.format or out.get("format")
        if args.format not in (None, "csv", "json"):
            raise UsageError(f"unknown format {args.format!r}")
        if args.format is None:
            args.format = "csv" if args.command in ("sweep", "stream-sim") else "json"
        if args.format == "csv" and args.command not in ("eig", "sweep", "limit0", "classify-robin", "stream-sim"):
            raise UsageError(f"{args.command} writes JSON only")
        if args.format == "json" and args.command == "stream-sim":
            raise UsageError("stream-sim writes CSV only")
        if args.map and (args.format != "csv" or args.command != "classify-robin"):
            if args.command == "classify-robin" and args.format == "json":
                args.format = "csv"
            else:
                raise UsageError("--map applies to classify-robin")
        text, code = COMMANDS[args.command](cfg, args)
        write_output(text, args.out)
        return code
    except UsageError as err:
        log.error("%s", err)
        return 1
    except st.CrossCheckError as err:
        log.error("cross-check failed: %s", err)
        return 3
    except AssertionError as err:
        log.error("assertion failed: %s", err)
        return 3
    except (ex.ExprError, ValueError, KeyError) as err:
        log.error("%s", err)
        return 1
    except (eigen.EigenError, st.SimulationError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as err:
        log.error("numerical failure: %s", err)
        return 2


def main():
    sys.exit(run())
