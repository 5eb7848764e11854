"""Command-line interface: ``itbn <command> ...``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure. Errors are
reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time as _time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io
from .infer import FilterSession, InferenceError, exact_joint, sample_paths, smooth
from .learn import LearnError, NotFullyObserved, fit_fully_observed, log_likelihood, select_knot_count
from .model import (
    DelayOutOfRange,
    ItbnStructure,
    ModelError,
    ProcessDecl,
    ProcessSpec,
    SplineConfig,
    node_count_comparison,
    unroll,
    validate,
)
from .observations import DataError, ObservationSet
from .splines import KnotError
from .timefind import Exact, FreeSlice, MonteCarlo, TimeFindError, TimeQuery, find_time, find_time_quantile
from .timegrid import (
    Timeline,
    TimelineError,
    compactness_study,
    simulate_geometric_timeline,
    to_fraction,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _load(args, *, params=True, data=True):
    structure = io.load_model(args.model)
    out = [structure]
    if params:
        out.append(io.load_params(args.params))
    if data:
        out.append(io.read_observations(args.data, structure))
    return out


def _entity(data: ObservationSet, ident: str):
    for key, ed in data:
        if str(key) == ident:
            return key, ed
    raise DataError(f"entity {ident!r} not in data (have {', '.join(sorted(map(str, data.entities)))})")


def _evidence(ed) -> dict:
    return {(p, j): v for (p, j), v in ed.values.items()}


# --------------------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    structure = io.load_model(args.model)
    problems = validate(structure)
    _emit({"ok": not problems, "violations": [
        {"kind": v.kind, "subject": v.subject, "message": v.message} for v in problems
    ]})
    return EXIT_OK if not problems else EXIT_DATA


def _parse_range(text: str) -> list[int]:
    try:
        lo, hi = (int(x) for x in text.split(".."))
    except ValueError:
        raise UsageError(f"--select-knots expects MIN..MAX, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise UsageError(f"--select-knots range {text!r} is empty or negative")
    return list(range(lo, hi + 1))


def cmd_fit(args) -> int:
    structure, data = _load(args, params=False)
    selection = {}
    if args.select_knots:
        candidates = _parse_range(args.select_knots)
        for name in structure.names:
            spec = structure.specs[name]
            if not spec.alpha.auto:
                continue
            best, scores = select_knot_count(
                structure, data, name, candidates, interpolate_parents=args.interpolate_parents
            )
            structure = structure.with_spec(
                name, ProcessSpec(SplineConfig(spec.alpha.degree, "auto", best), spec.beta, spec.lam, spec.initial)
            )
            selection[name] = {"alpha_knots": best, "aicc": {str(k): v for k, v in scores.items()}}
    fit = fit_fully_observed(structure, data, interpolate_parents=args.interpolate_parents)
    if selection:
        fit.options["knot_selection"] = selection
    io.save_fit(fit, args.out)
    _emit({
        "loglik": fit.loglik,
        "processes": {n: {"rows": f.n_rows, "edf": f.edf} for n, f in fit.processes.items()},
        "out": str(args.out),
    })
    return EXIT_OK


def cmd_loglik(args) -> int:
    structure, params, data = _load(args)
    sys.stdout.write(repr(log_likelihood(structure, params, data, interpolate_parents=args.interpolate_parents)) + "\n")
    return EXIT_OK


def cmd_smooth(args) -> int:
    structure, params, data = _load(args)
    _, ed = _entity(data, args.entity)
    net = unroll(structure, ed.timeline, params)
    ev = _evidence(ed)
    if net.is_chain():
        belief = smooth(net, ev)
    else:
        belief = exact_joint(net, ev, None)
    rows = sorted(
        ((net.nodes[net.key_index(k)].time, structure.names.index(k[0]), k[0], m, v)
         for k, m, v in zip(belief.keys, belief.mean, belief.variance)),
        key=lambda r: (r[0], r[1]),
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["process", "time", "mean", "variance"])
        for t, _, p, m, v in rows:
            w.writerow([p, io.format_time(t), repr(float(m)), repr(float(v))])
    return EXIT_OK


def _belief_json(belief, structure) -> dict:
    return {
        "time": io.format_time(belief.time),
        "nodes": [
            {"process": k[0], "mean": float(m), "variance": float(v)}
            for k, m, v in zip(belief.keys, belief.mean, belief.variance)
        ],
    }


def cmd_predict(args) -> int:
    structure, params, data = _load(args)
    _, ed = _entity(data, args.entity)
    session = FilterSession(structure, params)
    for j, t in enumerate(ed.timeline.exact_times):
        session.step(t, {p: v for (p, s), v in ed.values.items() if s == j})
    at = to_fraction(args.at)
    out = _belief_json(session.predict(at), structure)
    out["conditioned_on"] = {"slices": session.n_slices, "last_time": io.format_time(ed.timeline.exact_times[-1])}
    _emit(out)
    return EXIT_OK


def cmd_find_time(args) -> int:
    structure, params, data = _load(args)
    _, ed = _entity(data, args.entity)
    if args.mc is not None:
        estimator = MonteCarlo(count=args.mc, seed=args.seed)
    else:
        estimator = Exact()
    query = TimeQuery(args.process, args.slice, tuple(args.bracket), args.target, args.tol, estimator=estimator)
    free = FreeSlice(structure, params, ed.timeline, _evidence(ed))
    if args.quantile is not None:
        res = find_time_quantile(free, query, args.quantile)
    else:
        res = find_time(free, query)
    out = {"t": res.t, "residual": res.residual, "iterations": res.iterations, "value": res.value,
           "sign_changes": res.sign_changes}
    if args.mc is not None:
        out["std_error"] = res.std_error
        out["stages"] = res.stages
    _emit(out)
    return EXIT_OK


def _size_structure(m: int, resolution) -> ItbnStructure:
    return ItbnStructure([ProcessDecl(f"h{i}", "gaussian") for i in range(m)], [], {}, resolution)


def cmd_size_compare(args) -> int:
    if args.hidden_processes < 1:
        raise UsageError("--hidden-processes must be at least 1")
    if args.model:
        base = io.load_model(args.model)
    else:
        rows = io.read_observation_rows(args.data)
        base = ItbnStructure([ProcessDecl(p, "gaussian") for p in dict.fromkeys(r[2] for r in rows)], [], {},
                             args.resolution)
    data = io.read_observations(args.data, base)
    hidden = _size_structure(args.hidden_processes, base.resolution)
    table = []
    for entity, ed in sorted(data, key=lambda kv: str(kv[0])):
        itbn, dbn = node_count_comparison(hidden, [ed.timeline])
        table.append({"entity": str(entity), "slices": len(ed.timeline), "itbn_nodes": itbn, "dbn_nodes": dbn,
                      "ratio": dbn / itbn})
    ti = sum(r["itbn_nodes"] for r in table)
    td = sum(r["dbn_nodes"] for r in table)
    total = {"entity": "total", "slices": sum(r["slices"] for r in table), "itbn_nodes": ti, "dbn_nodes": td,
             "ratio": td / ti if ti else math.nan}
    if args.json:
        _emit({"entities": table, "total": total})
    else:
        _table(["entity", "slices", "itbn_nodes", "dbn_nodes", "ratio"], table + [total])
    return EXIT_OK


def cmd_prop3_sim(args) -> int:
    rows = []
    for n in args.n:
        for p in args.p:
            t0 = _time.perf_counter()
            s = compactness_study(n, p, args.reps, args.seed)
            rows.append({
                "n": n, "p": p, "reps": args.reps, "mean_ratio": s.mean_ratio, "expected_ratio": s.expected_ratio,
                "rel_error": abs(s.mean_ratio - s.expected_ratio) / s.expected_ratio,
                "pr_granularity_1": s.pr_unit_granularity, "seconds": _time.perf_counter() - t0,
            })
    if args.json:
        _emit(rows)
    else:
        _table(["n", "p", "reps", "mean_ratio", "expected_ratio", "rel_error", "pr_granularity_1", "seconds"], rows)
    return EXIT_OK


def _read_timelines(path, resolution) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "time" not in reader.fieldnames:
            raise DataError(f"{path}: timeline CSV needs a 'time' column (optionally 'entity')")
        groups: dict = {}
        for row in reader:
            groups.setdefault(row.get("entity") or None, []).append(to_fraction(row["time"]))
    return {k: Timeline.from_times(sorted(v), resolution, k) for k, v in groups.items()}


def cmd_simulate(args) -> int:
    structure = io.load_model(args.model)
    params = io.load_params(args.params)
    rng = np.random.default_rng(args.seed)
    out = ObservationSet()
    if args.timeline:
        timelines = _read_timelines(args.timeline, structure.resolution)
        if list(timelines) == [None]:
            tl = timelines[None]
            timelines = {str(e): Timeline(tl.ticks, tl.resolution, str(e)) for e in range(args.entities)}
    else:
        try:
            n_text, p_text = args.geometric.split(",")
            n, p = int(n_text), float(p_text)
        except ValueError:
            raise UsageError(f"--geometric expects n,p, got {args.geometric!r}") from None
        timelines = {}
        for e in range(args.entities):
            g = simulate_geometric_timeline(n, p, rng)
            times = [Fraction(t) for t in g.ticks]
            timelines[str(e)] = Timeline.from_times(times, structure.resolution, str(e))
    for entity, tl in timelines.items():
        path = sample_paths(structure, params, tl, 1, rng).entities[0]
        path.timeline = tl
        out.entities[entity] = path
    io.write_observations(out, structure, args.out)
    return EXIT_OK


def cmd_plot(args) -> int:
    structure, params, data = _load(args)
    _, ed = _entity(data, args.entity)
    process = args.process or structure.names[0]
    if process not in structure.names:
        raise DataError(f"unknown process {process!r}")
    step = to_fraction(args.grid)
    if step <= 0:
        raise UsageError("--grid must be positive")
    times = ed.timeline.exact_times
    ev = _evidence(ed)
    net = unroll(structure, ed.timeline, params)
    on_grid = exact_joint(net, ev, None)
    free = FreeSlice(structure, params, ed.timeline, ev)
    rows = []
    t = times[0]
    while t <= times[-1]:
        if t in times:
            m, v = on_grid[(process, times.index(t))]
        else:
            j = sum(1 for s in times if s < t)
            fnet, fev = free.ground(j, t)
            b = exact_joint(fnet, fev, [(process, j)])
            m, v = float(b.mean[0]), float(b.variance[0])
        sd = math.sqrt(max(v, 0.0))
        rows.append((t, m, m - 2 * sd, m + 2 * sd))
        t += step
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "mean", "lower", "upper"])
        for t, m, lo, hi in rows:
            w.writerow([io.format_time(t), repr(m), repr(lo), repr(hi)])
    if args.svg:
        obs = [(float(times[j]), v) for (p, j), v in ed.values.items() if p == process]
        Path(args.svg).write_text(_svg(rows, obs, process), encoding="utf-8")
    return EXIT_OK


def _svg(rows, obs, label, width=640, height=320, pad=40) -> str:
    ts = [float(r[0]) for r in rows]
    ys = [y for r in rows for y in r[1:]] + [v for _, v in obs]
    t0, t1 = min(ts), max(ts) if max(ts) > min(ts) else min(ts) + 1
    y0, y1 = min(ys), max(ys) if max(ys) > min(ys) else min(ys) + 1
    sx = lambda t: pad + (t - t0) / (t1 - t0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    upper = " ".join(f"{sx(float(r[0])):.2f},{sy(r[3]):.2f}" for r in rows)
    lower = " ".join(f"{sx(float(r[0])):.2f},{sy(r[2]):.2f}" for r in reversed(rows))
    mean = " ".join(f"{sx(float(r[0])):.2f},{sy(r[1]):.2f}" for r in rows)
    dots = "".join(f'<circle cx="{sx(t):.2f}" cy="{sy(v):.2f}" r="2.5"/>' for t, v in obs)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<polygon points="{upper} {lower}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>'
        f'<polyline points="{mean}" fill="none" stroke="#08519c" stroke-width="1.5"/>'
        f'<g fill="#d62728">{dots}</g>'
        f'<text x="{pad}" y="{pad / 2:.0f}" font-size="12">{label}: mean and 2 sd band</text></svg>\n'
    )


def _table(cols, rows) -> None:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    sys.stdout.write("  ".join(c.rjust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
    for row in cells:
        sys.stdout.write("  ".join(v.rjust(w) for v, w in zip(row, widths)).rstrip() + "\n")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="itbn", description="Irregular-time Bayesian networks")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def cmd(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        return p

    def mpd(p, params=True, data=True):
        p.add_argument("--model", required=True)
        if params:
            p.add_argument("--params", required=True)
        if data:
            p.add_argument("--data", required=True)

    p = cmd("validate", cmd_validate, "check a model spec")
    p.add_argument("--model", required=True)

    p = cmd("fit", cmd_fit, "fit CPDs on fully observed data")
    mpd(p, params=False)
    p.add_argument("--out", required=True)
    p.add_argument("--interpolate-parents", action="store_true")
    p.add_argument("--select-knots", metavar="MIN..MAX")

    p = cmd("loglik", cmd_loglik, "log-likelihood of data under fitted params")
    mpd(p)
    p.add_argument("--interpolate-parents", action="store_true")

    p = cmd("smooth", cmd_smooth, "posterior of every node of one entity")
    mpd(p)
    p.add_argument("--entity", required=True)
    p.add_argument("--out", required=True)

    p = cmd("predict", cmd_predict, "filter an entity and predict at a later time")
    mpd(p)
    p.add_argument("--entity", required=True)
    p.add_argument("--at", required=True)

    p = cmd("find-time", cmd_find_time, "solve for the time of a hidden slice")
    mpd(p)
    p.add_argument("--entity", required=True)
    p.add_argument("--process", required=True)
    p.add_argument("--slice", type=int, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--bracket", type=float, nargs=2, required=True, metavar=("T1", "T2"))
    p.add_argument("--quantile", type=float)
    p.add_argument("--mc", type=int, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)

    p = cmd("size-compare", cmd_size_compare, "grounded node counts: irregular vs gcd-grid")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden-processes", type=int, default=1, metavar="M")
    p.add_argument("--model")
    p.add_argument("--resolution", default="0.000001")
    p.add_argument("--json", action="store_true")

    p = cmd("prop3-sim", cmd_prop3_sim, "compression ratio under geometric gaps")
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--p", type=float, nargs="+", required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")

    p = cmd("simulate", cmd_simulate, "forward-sample observations")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--timeline")
    src.add_argument("--geometric", metavar="n,p")
    p.add_argument("--entities", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = cmd("plot", cmd_plot, "posterior mean and band over a time grid")
    mpd(p)
    p.add_argument("--entity", required=True)
    p.add_argument("--grid", required=True, metavar="STEP")
    p.add_argument("--process")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    return ap


_DATA_ERRORS = (DataError, ModelError, TimelineError, NotFullyObserved, DelayOutOfRange, KnotError,
                FileNotFoundError, IsADirectoryError, KeyError)
_NUMERIC_ERRORS = (LearnError, InferenceError, TimeFindError, np.linalg.LinAlgError, FloatingPointError)


def _fail(exc: BaseException, code: int) -> int:
    msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(msg), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    # NotFullyObserved is a LearnError but a data problem, so test data errors first
    except _DATA_ERRORS as exc:
        return _fail(exc, EXIT_DATA)
    except _NUMERIC_ERRORS as exc:
        return _fail(exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _fail(exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
