"""Command-line front end.

    mechfringe VERB --config RUN.ini [--seed S] [--out DIR] [--format csv|json|bin]
               [--threads N] [--summary] [--overwrite] [--print-config]

Verbs: filter, herald, wigner, sample, synthfit.

Config grammar (one run per file)::

    # comment            ; comment
    [section]
    key = value

Values are numbers, arithmetic over numbers and ``pi`` (``pi/2``, ``2*pi``,
``sqrt(2)``), words, booleans (true/false), click events written ``{m,n}``,
or whitespace-separated lists of those (no spaces inside one item).  Unknown
sections and keys are rejected.  The canonical form written next to every
output (``run.ini``) lists sections and keys in schema order with numbers in
shortest round-trip form, so parsing it again reproduces it byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import hashlib
import json
import math
import operator
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, montecarlo, multiport, tracefit, twoport, wigner
from .core import (EXPERIMENT, ConditioningError, ConfigurationError, CouplingConfig,
                   DomainError, NumericalError, ThermalState, Unit, conversion_factor)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
MASK64 = (1 << 64) - 1


class OutputCollision(OSError):
    pass


# --- arithmetic values ------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi}
_FUNCS = {"sqrt": math.sqrt}


def eval_number(text):
    """Evaluate a restricted arithmetic expression (numbers, pi, + - * / **, sqrt)."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse number {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigurationError(f"unsupported expression {text!r}")

    try:
        value = ev(tree)
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        raise ConfigurationError(f"cannot evaluate {text!r}: {exc}") from exc
    if not math.isfinite(value):
        raise ConfigurationError(f"{text!r} is not finite")
    return value


# --- typed fields -----------------------------------------------------------------

REQUIRED = object()


@dataclass(frozen=True)
class Field:
    kind: str               # float, int, seed, bool, word, event, measurement
    default: object = REQUIRED
    many: bool = False
    choices: tuple = ()

    def parse(self, text, where):
        items = text.split() if self.many else [text.strip()]
        if not items or items == [""]:
            raise ConfigurationError(f"{where}: empty value")
        out = [self._one(item, where) for item in items]
        return tuple(out) if self.many else out[0]

    def _one(self, item, where):
        try:
            if self.kind == "float":
                return float(eval_number(item))
            if self.kind in ("int", "seed"):
                value = eval_number(item)
                if int(value) != value:
                    raise ConfigurationError(f"{where}: {item!r} is not an integer")
                value = int(value)
                if self.kind == "seed" and not 0 <= value <= MASK64:
                    raise ConfigurationError(f"{where}: seed must fit in 64 unsigned bits")
                return value
            if self.kind == "bool":
                low = item.lower()
                if low not in ("true", "false"):
                    raise ConfigurationError(f"{where}: expected true or false, got {item!r}")
                return low == "true"
            if self.kind == "word":
                if self.choices and item not in self.choices:
                    raise ConfigurationError(f"{where}: {item!r} not one of {self.choices}")
                return item
            if self.kind == "event":
                return twoport.ClickEvent.parse(item)
            if self.kind == "measurement":
                # "{m,n}" for a two-port event, "N=3" for the N-port coincidence
                if item.upper().startswith("N="):
                    return int(item[2:])
                return twoport.ClickEvent.parse(item)
        except DomainError as exc:
            raise ConfigurationError(f"{where}: {exc}") from exc
        raise ConfigurationError(f"{where}: unknown field kind {self.kind}")

    def render(self, value):
        values = value if self.many else (value,)
        return " ".join(_render_one(v) for v in values)


def _render_one(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, twoport.ClickEvent):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _measurement_render(value):
    return f"N={value}" if isinstance(value, int) else str(value)


COUPLING = {"mu": Field("float"), "phi": Field("float"), "alpha": Field("float", 0.1)}
STATE = {"nbar": Field("float")}
RUN = {"seed": Field("seed", None)}

SCHEMAS = {
    "filter": {
        "coupling": COUPLING,
        "state": STATE,
        "filter": {"events": Field("event", many=True),
                   "x_min": Field("float", -10.0), "x_max": Field("float", 10.0),
                   "points": Field("int", 401)},
    },
    "herald": {
        "herald": {"mu": Field("float", many=True), "nbar": Field("float", many=True),
                   "phi": Field("float", many=True), "alpha": Field("float", many=True),
                   "events": Field("event", (), many=True),
                   "ports": Field("int", (), many=True)},
    },
    "wigner": {
        "coupling": COUPLING,
        "state": STATE,
        "wigner": {"measurement": Field("measurement"), "nx": Field("int", 512),
                   "np": Field("int", 512)},
    },
    "sample": {
        "run": RUN,
        "coupling": COUPLING,
        "drive": {"sigma": Field("float"),
                  "unit": Field("word", "quantum-noise",
                                choices=("quantum-noise", "readout-range", "meters"))},
        "sample": {"events": Field("event", many=True), "accepted": Field("int", 10000),
                   "bins": Field("int", 80), "range": Field("float", 4.0)},
    },
    "synthfit": {
        "run": RUN,
        "trace": {"A": Field("float", 1.0), "c": Field("float", 0.0),
                  "omega_m": Field("float", EXPERIMENT.omega_rad_s),
                  "n": Field("int", 5000), "rate": Field("float", 1e8),
                  "noise": Field("float", 0.01), "phi_r": Field("float", 0.3),
                  "d": Field("float", 0.1),
                  "modulate_offset": Field("bool", True)},
        "synthfit": {"mode": Field("word", "roundtrip", choices=("roundtrip", "drive")),
                     "count": Field("int", 100), "X": Field("float", 1.0),
                     "P": Field("float", 0.5), "sigma": Field("float", 0.74),
                     "tolerance": Field("float", 0.02),
                     "write_traces": Field("bool", False)},
    },
}

STOCHASTIC = ("sample", "synthfit")


@dataclass
class RunConfig:
    command: str
    values: dict   # section -> key -> parsed value

    def get(self, section, key):
        return self.values[section][key]

    @property
    def seed(self):
        return self.values.get("run", {}).get("seed")

    def canonical(self):
        schema = SCHEMAS[self.command]
        lines = [f"# mechfringe {__version__} {self.command}"]
        for section, fields in schema.items():
            lines.append(f"[{section}]")
            for key, fld in fields.items():
                value = self.values[section][key]
                if value is None:
                    continue
                if fld.kind == "measurement":
                    text = _measurement_render(value)
                else:
                    text = fld.render(value)
                if text:
                    lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_config(text, command, seed=None):
    """Parse config text for ``command``; ``seed`` (from the command line) wins over the file."""
    if command not in SCHEMAS:
        raise ConfigurationError(f"unknown command {command!r}")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None, default_section="\0")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    schema = SCHEMAS[command]
    values = {}
    for section in parser.sections():
        if section not in schema:
            raise ConfigurationError(f"unknown section [{section}] for {command}")
        for key in parser[section]:
            if key not in schema[section]:
                raise ConfigurationError(f"unknown key {section}.{key} for {command}")
    for section, fields in schema.items():
        values[section] = {}
        given = parser[section] if parser.has_section(section) else {}
        for key, fld in fields.items():
            where = f"{section}.{key}"
            if key in given:
                values[section][key] = fld.parse(given[key], where)
            elif fld.default is REQUIRED:
                raise ConfigurationError(f"missing required key {where}")
            else:
                values[section][key] = fld.default
    if seed is not None:
        if "run" not in values:
            raise ConfigurationError(f"{command} takes no seed")
        values["run"]["seed"] = RUN["seed"].parse(str(seed), "--seed")
    if command in STOCHASTIC and values["run"]["seed"] is None:
        raise ConfigurationError(f"{command} is stochastic: a seed is required "
                                 "(run.seed or --seed)")
    return RunConfig(command, values)


# --- outputs --------------------------------------------------------------------

class Output:
    """Collects files for one run; refuses to clobber unless told to."""

    def __init__(self, directory, config, fmt, overwrite=False):
        self.directory = directory
        self.config = config
        self.fmt = fmt
        self.overwrite = overwrite
        self.written = []

    @property
    def provenance(self):
        return {"tool": f"mechfringe {__version__}", "command": self.config.command,
                "config_sha256": self.config.digest(), "seed": self.config.seed}

    def header_lines(self):
        p = self.provenance
        return [f"tool={p['tool']} command={p['command']}",
                f"config_sha256={p['config_sha256']}", f"seed={p['seed']}"]

    def path(self, name):
        return os.path.join(self.directory, name)

    def check(self, names):
        if self.overwrite:
            return
        taken = [n for n in names if os.path.exists(self.path(n))]
        if taken:
            raise OutputCollision(f"refusing to overwrite {', '.join(taken)} in "
                                  f"{self.directory} (use --overwrite)")

    def target(self, name):
        """Register ``name`` as an output and return its path (parents created)."""
        path = self.path(name)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self.written.append(name)
        return path

    def _open(self, name, binary=False):
        if binary:
            return open(self.target(name), "wb")
        return open(self.target(name), "w", newline="\n")

    def table(self, stem, columns, rows):
        """Write a table as CSV or JSON depending on the run format."""
        if self.fmt == "json":
            with self._open(stem + ".json") as fh:
                doc = {"provenance": self.provenance, "columns": list(columns),
                       "rows": [list(r) for r in rows]}
                fh.write(_dumps(doc))
            return
        with self._open(stem + ".csv") as fh:
            for line in self.header_lines():
                fh.write(f"# {line}\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")

    def json(self, name, doc):
        with self._open(name) as fh:
            fh.write(_dumps({"provenance": self.provenance, **doc}))

    def blob(self, name, data, meta=None):
        """Binary file plus a ``.meta.json`` sidecar carrying provenance."""
        with self._open(name, binary=True) as fh:
            fh.write(data)
        self.json(name + ".meta.json", meta or {})

    def text(self, name, body):
        with self._open(name) as fh:
            fh.write(body)


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _dumps(doc):
    # json uses repr for floats, so values round-trip exactly
    return json.dumps(_jsonable(doc), indent=1, sort_keys=False) + "\n"


# --- commands -------------------------------------------------------------------

def _coupling(cfg):
    c = cfg.values["coupling"]
    return CouplingConfig(c["mu"], c["phi"], c["alpha"])


def _col(event):
    return str(event).replace(",", ";")


def cmd_filter(cfg, out, threads):
    coupling = _coupling(cfg)
    state = ThermalState(cfg.get("state", "nbar"))
    f = cfg.values["filter"]
    if f["points"] < 2 or not f["x_max"] > f["x_min"]:
        raise ConfigurationError("filter grid needs points >= 2 and x_max > x_min")
    if out.fmt == "bin":
        raise ConfigurationError("filter writes csv or json only")
    xs = np.linspace(f["x_min"], f["x_max"], f["points"])
    events = f["events"]
    out.check(["filter." + out.fmt, "pdf." + out.fmt, "run.ini"])
    curves = [twoport.filter_function(ev, coupling, xs) for ev in events]
    pdfs = []
    for ev in events:
        try:
            pdfs.append(twoport.conditional_position_pdf(ev, coupling, state, xs))
        except ConditioningError:
            pdfs.append(np.full_like(xs, math.nan))
    out.table("filter", ["x"] + [f"filter {_col(ev)}" for ev in events],
              zip(xs, *curves))
    out.table("pdf", ["x"] + [f"pdf {_col(ev)}" for ev in events], zip(xs, *pdfs))
    summary = {"herald_probability": {}, "fringe_period": {}, "peaks": {}}
    for ev, curve in zip(events, curves):
        summary["herald_probability"][str(ev)] = twoport.herald_probability(ev, coupling, state)
        fc = twoport.FilterCurve(xs, curve)
        summary["peaks"][str(ev)] = len(fc.peak_positions())
        try:
            summary["fringe_period"][str(ev)] = fc.period()
        except NumericalError:
            summary["fringe_period"][str(ev)] = None
    return summary


def cmd_herald(cfg, out, threads):
    h = cfg.values["herald"]
    if not h["events"] and not h["ports"]:
        raise ConfigurationError("herald needs events and/or ports")
    if out.fmt == "bin":
        raise ConfigurationError("herald writes csv or json only")
    out.check(["herald." + out.fmt, "run.ini"])
    rows = []
    worst = 0.0
    for mu in h["mu"]:
        for nbar in h["nbar"]:
            state = ThermalState(nbar)
            for phi in h["phi"]:
                for alpha in h["alpha"]:
                    coupling = CouplingConfig(mu, phi, alpha)
                    for ev in h["events"]:
                        quad = twoport.herald_probability_quadrature(ev, coupling, state)
                        if ev in twoport.TABULATED_EVENTS:
                            closed = twoport.herald_probability_closed(ev, coupling, nbar)
                        else:
                            closed = math.nan
                        diff = abs(closed - quad) if math.isfinite(closed) else math.nan
                        if math.isfinite(diff):
                            worst = max(worst, diff)
                        rows.append((_col(ev), mu, nbar, phi, alpha, closed, quad, diff))
                    for N in h["ports"]:
                        closed = multiport.herald_probability_N(N, coupling, nbar)
                        quad = multiport.herald_probability_N_quadrature(N, coupling, state)
                        worst = max(worst, abs(closed - quad))
                        rows.append((f"N={N}", mu, nbar, phi, alpha, closed, quad,
                                     abs(closed - quad)))
    out.table("herald", ["measurement", "mu", "nbar", "phi", "alpha", "closed", "quadrature",
                         "abs_diff"], rows)
    return {"rows": len(rows), "max_abs_diff": worst}


def cmd_wigner(cfg, out, threads):
    coupling = _coupling(cfg)
    nbar = cfg.get("state", "nbar")
    w = cfg.values["wigner"]
    meas = w["measurement"]
    name = {"csv": "wigner.csv", "json": "wigner.json", "bin": "wigner.bin"}[out.fmt]
    names = [name, "summary.json", "run.ini"] + (["wigner.bin.meta.json"] if out.fmt == "bin" else [])
    out.check(names)
    grid = wigner.conditional_wigner(meas, coupling, nbar, w["nx"], w["np"])
    value, where = wigner.wigner_minimum_numeric(grid)
    s = wigner.closed_form_scale(meas, coupling)
    closed = wigner.min_wigner_closed(s, nbar) if s is not None else None
    pdf = wigner.measurement_pdf(meas, coupling, nbar, grid.grid_x)
    marginal_dev = float(np.abs(grid.position_marginal() - pdf).max())
    summary = {"measurement": wigner.measurement_label(meas), "min_numeric": value,
               "min_location": list(where), "min_closed": closed,
               "weak_limit": wigner.min_wigner_limits(nbar, "weak"),
               "strong_limit": wigner.min_wigner_limits(nbar, "strong"),
               "total": grid.total(), "marginal_max_deviation": marginal_dev,
               "herald_probability": wigner.measurement_probability(meas, coupling, nbar)}
    meta = {"x0": float(grid.grid_x[0]), "p0": float(grid.grid_p[0]), **grid.meta}
    if out.fmt == "csv":
        grid.write_csv(out.target(name), out.header_lines())
    elif out.fmt == "json":
        out.json(name, {"grid_x": grid.grid_x, "grid_p": grid.grid_p, "W": grid.values,
                        "meta": meta})
    else:
        out.blob(name, grid.to_bytes(), meta)
    out.json("summary.json", summary)
    return summary


def _sample_seed(seed, index):
    # one independent key space per event; workers XOR into the low bits
    return (seed ^ (index << 32)) & MASK64


def cmd_sample(cfg, out, threads):
    coupling = _coupling(cfg)
    d = cfg.values["drive"]
    s = cfg.values["sample"]
    if out.fmt == "bin":
        raise ConfigurationError("sample writes csv or json only")
    if s["accepted"] < 1 or s["bins"] < 2 or not s["range"] > 0:
        raise ConfigurationError("sample needs accepted >= 1, bins >= 2, range > 0")
    events = s["events"]
    names = []
    for ev in events:
        tag = f"{ev.m}_{ev.n}"
        names += [f"points_{tag}.{out.fmt}", f"hist_{tag}.{out.fmt}"]
    out.check(names + ["summary.json", "run.ini"])
    unit = Unit(d["unit"])
    constants = None if unit is Unit.QUANTUM_NOISE else EXPERIMENT
    sigma_qn = d["sigma"] * conversion_factor(unit, Unit.QUANTUM_NOISE, constants)
    drive_state = montecarlo.drive_thermal_state(sigma_qn)
    summary = {"acceptance_rate": {}, "expected_rate": {}, "rate_zscore": {}, "attempts": {}}
    lim = s["range"] * d["sigma"]
    for k, ev in enumerate(events):
        drive = montecarlo.DriveConfig(d["sigma"], _sample_seed(cfg.seed, k), unit)
        ens = montecarlo.run_ensemble(ev, coupling, drive, s["accepted"], threads=threads,
                                      constants=constants)
        hist = montecarlo.histogram(ens, s["bins"], (-lim, lim))
        tag = f"{ev.m}_{ev.n}"
        out.table(f"points_{tag}", ["x", "p"], zip(ens.x, ens.p))
        out.table(f"hist_{tag}", ["center", "x_density", "p_density"],
                  zip(hist.x_centers, hist.x_density, hist.p_density))
        bound = twoport.filter_bound(ev, coupling)
        expected = twoport.herald_probability(ev, coupling, drive_state) / bound if bound else 0.0
        rate = ens.acceptance_rate
        sd = math.sqrt(max(expected * (1 - expected), 1e-300) / ens.attempts)
        summary["acceptance_rate"][str(ev)] = rate
        summary["expected_rate"][str(ev)] = expected
        summary["rate_zscore"][str(ev)] = (rate - expected) / sd
        summary["attempts"][str(ev)] = ens.attempts
    out.json("summary.json", summary)
    return summary


def cmd_synthfit(cfg, out, threads):
    tr = cfg.values["trace"]
    sf = cfg.values["synthfit"]
    if sf["count"] < 1:
        raise ConfigurationError("synthfit.count must be >= 1")
    known = tracefit.Known(tr["A"], tr["c"], tr["omega_m"])
    fmt = out.fmt
    if fmt == "bin" and not sf["write_traces"]:
        raise ConfigurationError("--format bin applies to traces; set synthfit.write_traces")
    table_fmt = "json" if fmt == "json" else "csv"
    names = [f"fits.{table_fmt}", "summary.json", "run.ini"]
    if sf["write_traces"]:
        ext = "bin" if fmt == "bin" else "csv"
        names += [f"traces/trace_{i:05d}.{ext}" for i in range(sf["count"])]
    out.check(names)
    rng = montecarlo.make_rng(cfg.seed, 0)
    truths, traces = [], []
    for i in range(sf["count"]):
        if sf["mode"] == "roundtrip":
            X, P = sf["X"], sf["P"]
        else:
            # drive sigma is given in readout-range units; the fit works in radians
            r = rng.rayleigh(sf["sigma"] * math.pi)
            theta = rng.uniform(0.0, 2 * math.pi)
            X, P = r * math.cos(theta), r * math.sin(theta)
        params = tracefit.TraceModelParams(tr["A"], tr["c"], tr["omega_m"], X, P, tr["phi_r"],
                                           tr["d"])
        trace = tracefit.synthesize_trace(params, tr["noise"] * tr["A"], tr["n"], tr["rate"],
                                          rng, modulate_offset=tr["modulate_offset"])
        truths.append(params.canonical())
        traces.append(trace)
    items = tracefit.batch_fit(traces, known, threads, tr["modulate_offset"])
    rows = []
    within = 0
    fitted = []
    for i, (truth, item) in enumerate(zip(truths, items)):
        if item.fit is None:
            rows.append((i, truth.X, truth.P, math.nan, math.nan, math.nan, math.nan, math.nan,
                         0, False, item.flag))
            continue
        fp = item.fit.params
        dx, dp = abs(fp.X - truth.X), abs(fp.P - truth.P)
        ok = item.ok and dx < sf["tolerance"] and dp < sf["tolerance"]
        within += ok
        fitted.append((item.point.x, item.point.p))
        rows.append((i, truth.X, truth.P, fp.X, fp.P, fp.phi_r, fp.d, item.fit.rms_residual,
                     item.fit.iterations, ok, item.flag))
    columns = ["index", "true_X_rad", "true_P_rad", "fit_X_rad", "fit_P_rad", "fit_phi_r",
               "fit_d", "rms_residual", "iterations", "within_tolerance", "flag"]
    if table_fmt == "json":
        out.json("fits.json", {"columns": columns, "rows": rows})
    else:
        out.table("fits", columns, rows)
    if sf["write_traces"]:
        for i, trace in enumerate(traces):
            name = f"traces/trace_{i:05d}"
            if fmt == "bin":
                with out._open(name + ".bin", binary=True) as fh:
                    fh.write(trace.to_bytes())
            else:
                trace.write_csv(out.target(name + ".csv"), out.header_lines())
    summary = {"count": len(items), "converged": sum(it.ok for it in items),
               "flagged": sum(not it.ok for it in items), "within_tolerance": within}
    if sf["mode"] == "drive" and fitted:
        pts = np.array(fitted)
        summary["sigma_hat_readout_range"] = float(np.sqrt(np.mean(pts ** 2)))
        summary["sigma_readout_range"] = sf["sigma"]
    out.json("summary.json", summary)
    return summary


COMMANDS = {"filter": cmd_filter, "herald": cmd_herald, "wigner": cmd_wigner,
            "sample": cmd_sample, "synthfit": cmd_synthfit}


# --- entry point ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--seed", type=int, help="64-bit seed (overrides run.seed)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--format", choices=("csv", "json", "bin"), default="csv")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: all cores; 1 is the reference path)")
    common.add_argument("--summary", action="store_true",
                        help="print key scalars as JSON on stdout")
    common.add_argument("--overwrite", action="store_true",
                        help="allow replacing existing output files")
    common.add_argument("--print-config", action="store_true",
                        help="print the canonical configuration and exit")
    parser = argparse.ArgumentParser(prog="mechfringe", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"mechfringe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        with open(args.config) as fh:
            text = fh.read()
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text, args.command, args.seed)
        if args.print_config:
            sys.stdout.write(cfg.canonical())
            return EXIT_OK
        out = Output(args.out, cfg, args.format, args.overwrite)
        summary = COMMANDS[args.command](cfg, out, args.threads)
        out.text("run.ini", cfg.canonical())
    except (ConfigurationError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ConditioningError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.summary:
        sys.stdout.write(_dumps({"provenance": out.provenance, **summary}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
