"""Command-line experiment runner: ``rsma-snc {analyze,simulate,optimize,compare,validate}``.

Every command writes CSV files into ``--out`` plus a ``manifest.json``.  Each
CSV starts with a ``#`` comment carrying the manifest hash, which covers the
command, flags, scenario digest, seed and tool version (not the wall clock),
so reruns reproduce the CSV bytes exactly.

Exit codes: 0 on success (infeasible results included), 1 on usage errors,
2 on numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .optimizer import REFERENCE_MARGINS, ProblemKind, compare_schemes, tsso
from .quadrature import QuadratureError
from .scenario import (
    QosTarget,
    Scenario,
    ScenarioError,
    Scheme,
    arrival_bits_per_slot,
    load_scenario,
    slots_from_ms,
    streams_for,
)
from .simulator import SimConfig, analytic_dep, run, ub_curve, validate_bound, validation_operating_point
from .snc import ArrivalModel, ServiceModel, SncKernel, ub_sdvp

CSV_SCHEMA = 1
SWEEP_AXES = ("w_th", "xi_th", "eps_th")
# w_th is swept in milliseconds; xi_th and eps_th in log10 units.
DEFAULT_SWEEPS = {"w_th": (1.0, 3.0, 0.5), "xi_th": (-8.0, -4.0, 1.0), "eps_th": (-7.0, -3.0, 1.0)}
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    scenario_digest: str
    seed: int
    tool_version: str
    flags: dict
    wall_clock_s: float = 0.0
    outputs: list = field(default_factory=list)

    def digest(self) -> str:
        body = {k: v for k, v in asdict(self).items() if k not in ("wall_clock_s", "outputs")}
        body["csv_schema"] = CSV_SCHEMA
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


class Output:
    """Collects CSV artifacts for one command and writes the manifest."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        self.dir = out_dir
        self.manifest = manifest
        self.dir.mkdir(parents=True, exist_ok=True)

    def write_csv(self, name: str, header: list, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# manifest={self.manifest.digest()} command={self.manifest.command} "
                  f"scenario={self.manifest.scenario_digest} schema={CSV_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        path = self.dir / name
        path.write_text(buf.getvalue())
        self.manifest.outputs.append(name)
        return path

    def finish(self, started: float):
        self.manifest.wall_clock_s = round(time.time() - started, 3)
        data = asdict(self.manifest)
        data["manifest_hash"] = self.manifest.digest()
        (self.dir / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (np.floating, np.integer)):
        return _fmt(v.item())
    if isinstance(v, bool):
        return "1" if v else "0"
    return v


# ---------------------------------------------------------------------------
# argument helpers

def _parse_range(text: str | None, default: str = "1:20") -> tuple[int, int]:
    text = default if text is None else text
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--w-range expects LO:HI integers, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise UsageError("--w-range needs 0 <= LO <= HI")
    return lo, hi


def _parse_sweep(text: str):
    try:
        axis, rng = text.split("=", 1)
        start, stop, step = (float(x) for x in rng.split(":"))
    except ValueError:
        raise UsageError(f"--sweep expects AXIS=START:STOP:STEP, got {text!r}") from None
    if axis not in SWEEP_AXES:
        raise UsageError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
    if step <= 0 or stop < start:
        raise UsageError("sweep needs STEP > 0 and STOP >= START")
    return axis, _sweep_values(start, stop, step)


def _sweep_values(start, stop, step):
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(n)]


def _per_stream(values: str | None, s: Scenario, name: str):
    if values is None:
        return None
    try:
        parts = [float(x) for x in values.split(",")]
    except ValueError:
        raise UsageError(f"--{name} expects a number or a comma list") from None
    streams = streams_for(s.scheme)
    if len(parts) == 1:
        parts = parts * len(streams)
    if len(parts) != len(streams):
        raise UsageError(f"--{name} needs 1 or {len(streams)} values (order {','.join(q.value for q in streams)})")
    return dict(zip(streams, parts))


def _targets(args, s: Scenario) -> QosTarget:
    return QosTarget(slots_from_ms(s, args.w_th_ms), args.xi_th, args.eps_th)


def _operating_point(args, s: Scenario) -> dict:
    bits = _per_stream(args.bits, s, "bits")
    power = _per_stream(args.power, s, "power")
    if bits is None or power is None:
        base = validation_operating_point(s)
        bits = bits or {q: v[0] for q, v in base.items()}
        power = power or {q: v[1] for q, v in base.items()}
    for q in streams_for(s.scheme):
        if not 0.0 <= power[q] <= s.p_max_w:
            raise UsageError(f"power of {q.value} outside [0, p_max]")
        if bits[q] < 1:
            raise UsageError(f"bits of {q.value} must be >= 1")
    return {q: (bits[q], power[q]) for q in streams_for(s.scheme)}


def _scenario(args) -> Scenario:
    s = load_scenario(args.scenario) if args.scenario else Scenario()
    if args.scheme == "all" and args.command not in ("optimize", "compare"):
        raise UsageError(f"--scheme all is only valid for optimize and compare")
    if args.scheme != "all":
        s = s.with_(scheme=Scheme(args.scheme))
    return s


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}


# ---------------------------------------------------------------------------
# commands

def cmd_analyze(args, s: Scenario, out: Output):
    lo, hi = _parse_range(args.w_range)
    op = _operating_point(args, s)
    powers = {q: v[1] for q, v in op.items()}
    rows = []
    for q in streams_for(s.scheme):
        b = op[q][0]
        dep = analytic_dep(s, q, b, powers)
        lam = arrival_bits_per_slot(s, q)
        for w in range(lo, hi + 1):
            r = ub_sdvp(SncKernel(ArrivalModel(lam), ServiceModel(b, dep), w), s.algo)
            flag = "UNSTABLE" if not r.feasible else ("UNDERFLOW" if r.underflow else "OK")
            rows.append((q.value, w, b, op[q][1], dep, r.value, r.theta_star, r.theta_max, flag))
    out.write_csv("analyze.csv", ["stream", "w_slots", "b_bits", "p_w", "dep", "ub_sdvp", "theta_star",
                                  "theta_max", "flag"], rows)


def cmd_simulate(args, s: Scenario, out: Output):
    lo, hi = _parse_range(args.w_range)
    op = _operating_point(args, s)
    cfg = SimConfig(slots=args.slots, seed=args.seed, warmup_slots=min(args.warmup, args.slots - 1),
                    sampling=args.sampling, w_max=hi)
    res = run(s, op, cfg)
    powers = {q: v[1] for q, v in op.items()}
    rows, summary = [], []
    for q in streams_for(s.scheme):
        st = res[q]
        dep = analytic_dep(s, q, st.b_bits, powers)
        ws = np.arange(lo, hi + 1)
        ub = ub_curve(s, q, st.b_bits, dep, ws)
        for w, u in zip(ws, ub):
            rows.append((q.value, int(w), st.sim_sdvp[w], st.stderr[w], u, int(st.tail_events[w]),
                         bool(st.censored[w])))
        summary.append((q.value, st.b_bits, st.p_w, st.emp_dep, st.emp_dep_stderr, dep, st.arrivals_total,
                        st.departures_total, st.final_backlog, "UNSTABLE" if st.unstable else "OK"))
    tag = cfg.sampling.value
    out.write_csv(f"simulate_{tag}.csv", ["stream", "w_slots", "sim_sdvp", "stderr", "ub_sdvp", "tail_events",
                                          "censored"], rows)
    out.write_csv(f"simulate_{tag}_summary.csv", ["stream", "b_bits", "p_w", "emp_dep", "emp_dep_stderr",
                                                  "dep_expected", "arrivals", "departures", "final_backlog",
                                                  "status"], summary)


def _solution_rows(label, res):
    rows = []
    for q, sol in res.solutions.items():
        rows.append((label, res.scheme.value, q.value, sol.b_bits, sol.p_w, sol.theta_star, sol.achieved_xi,
                     sol.achieved_dep, sol.iterations, sol.scan_steps, "OK" if sol.feasible else "INFEASIBLE",
                     sol.binding or ""))
    return rows


SOLUTION_HEADER = ["run", "scheme", "stream", "b_bits", "p_w", "theta_star", "achieved_xi", "achieved_dep",
                   "iterations", "scan_steps", "status", "binding"]


def cmd_optimize(args, s: Scenario, out: Output):
    schemes = list(Scheme) if args.scheme == "all" else [s.scheme]
    tgt = _targets(args, s)
    rows, trace, alpha = [], [], []
    for sc in schemes:
        res = tsso(s.with_(scheme=sc), args.problem, tgt)
        rows += _solution_rows(args.problem, res)
        alpha.append((sc.value, res.alpha_star, res.total_bits, res.total_power, res.feasible))
        for q, sol in res.solutions.items():
            for k, (it, lo_b, hi_b, xi, dep) in enumerate(sol.trace, 1):
                trace.append((sc.value, q.value, k, it, lo_b, hi_b, xi, dep))
    out.write_csv("optimize.csv", SOLUTION_HEADER, rows)
    out.write_csv("optimize_alpha.csv", ["scheme", "alpha_star", "total_bits", "total_power", "all_feasible"],
                  alpha)
    out.write_csv("optimize_trace.csv", ["scheme", "stream", "step", "iterate", "lower", "upper", "xi", "dep"],
                  trace)


def _apply_axis(s: Scenario, base: QosTarget, axis: str, value: float) -> QosTarget:
    if axis == "w_th":
        return QosTarget(slots_from_ms(s, value), base.xi_th, base.eps_th)
    if axis == "xi_th":
        return QosTarget(base.w_th_slots, 10.0 ** value, base.eps_th)
    return QosTarget(base.w_th_slots, base.xi_th, 10.0 ** value)


def cmd_compare(args, s: Scenario, out: Output):
    if args.sweep:
        axis, values = _parse_sweep(args.sweep)
    else:
        axis = "w_th"
        values = _sweep_values(*DEFAULT_SWEEPS[axis])
    base = _targets(args, s)
    targets = [_apply_axis(s, base, axis, v) for v in values]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(lambda t: compare_schemes(s, args.problem, t), targets))
    rows, margins = [], []
    ref = REFERENCE_MARGINS.get(f"{args.problem}_{axis}", (math.nan, math.nan))
    for v, t, cmp in zip(values, targets, results):
        for sc, res in cmp.results.items():
            bad = [q.value for q, sol in res.solutions.items() if not sol.feasible]
            rows.append((axis, v, t.w_th_slots, t.xi_th, t.eps_th, sc.value, res.total_bits, res.total_power,
                         res.alpha_star, res.feasible, ";".join(bad)))
        m = cmp.margins()
        margins.append((axis, v, m[Scheme.NOMA], m[Scheme.OMA], ref[0], ref[1]))
    out.write_csv("compare.csv", ["axis", "value", "w_th_slots", "xi_th", "eps_th", "scheme", "total_bits",
                                  "total_power", "alpha_star", "all_feasible", "infeasible_streams"], rows)
    out.write_csv("compare_margins.csv", ["axis", "value", "gain_vs_noma", "gain_vs_oma", "reference_vs_noma",
                                          "reference_vs_oma"], margins)


def cmd_validate(args, s: Scenario, out: Output):
    lo, hi = _parse_range(args.w_range, "1:40")
    op = _operating_point(args, s)
    cfg = SimConfig(slots=args.slots, seed=args.seed, warmup_slots=min(args.warmup, args.slots - 1),
                    sampling=args.sampling, w_max=hi)
    reports = validate_bound(s, op, _targets(args, s), cfg)
    rows, summary = [], []
    for q, r in reports.items():
        for k, w in enumerate(r.w):
            if w < lo:
                continue
            rows.append((q.value, int(w), r.sim[k], r.stderr[k], r.ub[k], bool(r.well_sampled[k]),
                         bool(r.censored[k])))
        summary.append((q.value, r.bound_holds, r.slope_ub, r.slope_sim, r.slope_rel_error, r.dep_analytic,
                        r.emp_dep, int(r.well_sampled.sum()), r.h_hat_mode))
    out.write_csv("validate.csv", ["stream", "w_slots", "sim_sdvp", "stderr", "ub_sdvp", "well_sampled",
                                   "censored"], rows)
    out.write_csv("validate_summary.csv", ["stream", "bound_holds", "slope_ub", "slope_sim", "slope_rel_error",
                                           "dep_expected", "emp_dep", "well_sampled_points", "h_hat_mode"],
                  summary)
    for row in summary:
        print(f"{row[0]}: bound_holds={row[1]} slope_ub={row[2]:.4f} slope_sim={row[3]:.4f} "
              f"rel_error={row[4]:.3f}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", help="scenario file (key = value lines); defaults when omitted")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--scheme", choices=["rsma", "noma", "oma", "all"], default="rsma")
    common.add_argument("--w-th-ms", type=float, default=2.0, help="target delay in ms (default 2)")
    common.add_argument("--xi-th", type=float, default=1e-6, help="SDVP threshold (default 1e-6)")
    common.add_argument("--eps-th", type=float, default=1e-5, help="DEP threshold (default 1e-5)")

    point = _Parser(add_help=False)
    point.add_argument("--bits", help="packet size per stream in decoding order (one value or a comma list)")
    point.add_argument("--power", help="power per stream in watts (one value or a comma list)")
    point.add_argument("--w-range", help="delay range LO:HI in slots (default 1:20, validate 1:40)")

    sim = _Parser(add_help=False)
    sim.add_argument("--slots", type=_positive_int, default=10_000_000)
    sim.add_argument("--seed", type=_seed, default=0)
    sim.add_argument("--warmup", type=_positive_int, default=10_000)
    sim.add_argument("--sampling", choices=["exact", "gaussian-approx"], default="exact")

    p = _Parser(prog="rsma-snc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", parents=[common, point], help="UB-SDVP versus delay per stream")
    a.set_defaults(func=cmd_analyze)
    sm = sub.add_parser("simulate", parents=[common, point, sim], help="Monte-Carlo SDVP curves")
    sm.set_defaults(func=cmd_simulate)
    o = sub.add_parser("optimize", parents=[common], help="solve P1 or P2 with TSSO")
    o.add_argument("--problem", choices=["p1", "p2"], default="p1")
    o.set_defaults(func=cmd_optimize)
    c = sub.add_parser("compare", parents=[common], help="RSMA/NOMA/OMA over a target sweep")
    c.add_argument("--problem", choices=["p1", "p2"], default="p1")
    c.add_argument("--sweep", help="AXIS=START:STOP:STEP; w_th in ms, xi_th and eps_th in log10")
    c.add_argument("--workers", type=_positive_int, default=4)
    c.set_defaults(func=cmd_compare)
    v = sub.add_parser("validate", parents=[common, point, sim], help="bound versus simulation report")
    v.set_defaults(func=cmd_validate)
    return p


def _positive_int(text: str) -> int:
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1 or v != float(text):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        s = _scenario(args)
        manifest = RunManifest(args.command, s.digest(), getattr(args, "seed", 0), __version__, _flags(args))
        out = Output(Path(args.out), manifest)
        args.func(args, s, out)
        out.finish(started)
    except FileNotFoundError as e:
        print(f"rsma-snc: error: scenario file not found: {e.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ScenarioError, ValueError) as e:
        print(f"rsma-snc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (QuadratureError, FloatingPointError, ArithmeticError) as e:
        print(f"rsma-snc: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
