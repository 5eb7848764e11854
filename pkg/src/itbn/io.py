"""Model-spec / params JSON and observation CSV."""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .learn import FitResult, ProcessFit
from .model import (
    BernoulliInitial,
    BernoulliLogitCpd,
    EdgeDecl,
    GaussianInitial,
    GaussianLinearCpd,
    ItbnStructure,
    ModelError,
    ProcessDecl,
    ProcessParams,
    ProcessSpec,
    SplineConfig,
)
from .observations import DataError, ObservationSet
from .splines import SplineSpec
from .timegrid import to_fraction

CSV_HEADER = ["entity", "time", "process", "value"]
PARAMS_FORMAT = "itbn-params/1"


def format_time(t) -> str:
    """Exact decimal text for decimal rationals, shortest float repr otherwise."""
    t = to_fraction(t)
    for k in range(0, 19):
        scaled = t * 10**k
        if scaled.denominator == 1:
            n = scaled.numerator
            sign = "-" if n < 0 else ""
            n = abs(n)
            if k == 0:
                return f"{sign}{n}"
            whole, frac = divmod(n, 10**k)
            frac_s = f"{frac:0{k}d}".rstrip("0")
            return f"{sign}{whole}" + (f".{frac_s}" if frac_s else "")
    return repr(float(t))


def _frac_text(x: Fraction) -> str:
    return format_time(x)


# --------------------------------------------------------------------------- model spec


def _spline_cfg(d: dict | None) -> SplineConfig:
    if d is None:
        return SplineConfig()
    knots = d.get("knots", "auto")
    return SplineConfig(int(d.get("degree", 0)), knots, int(d.get("count", 0)))


def _initial_from(d: dict | None):
    if d is None:
        return None
    if "p0" in d:
        return BernoulliInitial(float(d["p0"]))
    return GaussianInitial(float(d["mu0"]), float(d["tau0"]))


def model_from_dict(doc: dict) -> ItbnStructure:
    try:
        processes = [
            ProcessDecl(p["name"], p.get("family", "gaussian"), p.get("offset", 0)) for p in doc["processes"]
        ]
        edges = [
            EdgeDecl(e["parent"], e["child"], e.get("lag", "intra"), e.get("delay", 0), e.get("role", "gamma"))
            for e in doc.get("edges", [])
        ]
        specs = {}
        for name, c in doc.get("cpds", {}).items():
            specs[name] = ProcessSpec(
                _spline_cfg(c.get("alpha")), _spline_cfg(c.get("beta")), float(c.get("lambda", 0.0)),
                _initial_from(c.get("initial")),
            )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model spec: missing or invalid field {exc}") from exc
    unknown = set(specs) - {p.name for p in processes}
    if unknown:
        raise ModelError(f"cpds given for undeclared processes {sorted(unknown)}")
    return ItbnStructure(processes, edges, specs, doc.get("resolution", "0.000001"))


def _spline_cfg_dict(c: SplineConfig) -> dict:
    return {"degree": c.degree, "knots": "auto" if c.auto else list(c.knots), "count": c.count}


def model_to_dict(structure: ItbnStructure) -> dict:
    lag_name = {0: "intra", 1: "previous"}
    cpds = {}
    for name, s in structure.specs.items():
        entry = {"alpha": _spline_cfg_dict(s.alpha), "beta": _spline_cfg_dict(s.beta), "lambda": s.lam}
        if s.initial is not None:
            entry["initial"] = _initial_dict(s.initial)
        cpds[name] = entry
    return {
        "resolution": _frac_text(structure.resolution),
        "processes": [{"name": p.name, "family": p.family, "offset": _frac_text(p.offset)} for p in structure.processes],
        "edges": [
            {"parent": e.parent, "child": e.child, "lag": lag_name.get(e.lag, e.lag), "delay": _frac_text(e.delay),
             "role": e.role}
            for e in structure.edges
        ],
        "cpds": cpds,
    }


def load_model(path) -> ItbnStructure:
    return model_from_dict(_read_json(path))


def save_model(structure: ItbnStructure, path) -> None:
    _write_json(model_to_dict(structure), path)


# --------------------------------------------------------------------------- params


def _initial_dict(init) -> dict:
    if isinstance(init, GaussianInitial):
        return {"mu0": init.mu0, "tau0": init.tau0}
    return {"p0": init.p0}


def _spline_dict(s: SplineSpec | None):
    if s is None:
        return None
    return {"degree": s.degree, "knots": list(s.knots), "coefficients": s.coefficients.tolist()}


def _spline_from(d) -> SplineSpec | None:
    if d is None:
        return None
    return SplineSpec(int(d["degree"]), tuple(d["knots"]), np.array(d["coefficients"], dtype=float))


def params_to_dict(params: dict[str, ProcessParams]) -> dict:
    out = {}
    for name, pp in params.items():
        cpd = pp.cpd
        entry = {
            "family": "gaussian" if isinstance(cpd, GaussianLinearCpd) else "bernoulli",
            "alpha": _spline_dict(cpd.alpha),
            "beta": _spline_dict(cpd.beta),
            "gamma": cpd.gamma.tolist(),
            "initial": _initial_dict(pp.initial),
        }
        if isinstance(cpd, GaussianLinearCpd):
            entry["tau"] = cpd.tau
        out[name] = entry
    return out


def params_from_dict(doc: dict) -> dict[str, ProcessParams]:
    procs = doc.get("processes", doc)
    out = {}
    for name, e in procs.items():
        alpha, beta = _spline_from(e["alpha"]), _spline_from(e.get("beta"))
        gamma = np.array(e.get("gamma", []), dtype=float)
        if e["family"] == "gaussian":
            cpd = GaussianLinearCpd(alpha, beta, gamma, float(e["tau"]))
        else:
            cpd = BernoulliLogitCpd(alpha, beta, gamma)
        out[name] = ProcessParams(cpd, _initial_from(e["initial"]))
    return out


def fit_to_dict(fit: FitResult) -> dict:
    base = params_to_dict(fit.params)
    for name, pf in fit.processes.items():
        base[name].update(
            n_rows=pf.n_rows,
            edf=pf.edf,
            loglik=pf.loglik,
            initial_loglik=pf.initial_loglik,
            objective=pf.objective,
            penalized_loglik=pf.penalized_loglik,
            standard_errors=pf.standard_errors.tolist(),
            covariance=pf.covariance.tolist(),
            diagnostics=pf.diagnostics,
        )
    return {
        "format": PARAMS_FORMAT,
        "processes": base,
        "loglik": fit.loglik,
        "objective": fit.objective,
        "options": fit.options,
        "diagnostics": fit.diagnostics,
    }


def fit_from_dict(doc: dict) -> FitResult:
    params = params_from_dict(doc)
    fits = {}
    for name, e in doc["processes"].items():
        fits[name] = ProcessFit(
            process=name,
            family=e["family"],
            params=params[name],
            n_rows=int(e["n_rows"]),
            edf=float(e["edf"]),
            loglik=float(e["loglik"]),
            initial_loglik=float(e["initial_loglik"]),
            objective=float(e["objective"]),
            penalized_loglik=float(e["penalized_loglik"]),
            standard_errors=np.array(e["standard_errors"], dtype=float),
            covariance=np.array(e["covariance"], dtype=float).reshape(len(e["standard_errors"]), -1),
            regression=None,
            diagnostics=dict(e.get("diagnostics", {})),
        )
    return FitResult(fits, dict(doc.get("options", {})), dict(doc.get("diagnostics", {})))


def save_fit(fit: FitResult, path) -> None:
    _write_json(fit_to_dict(fit), path)


def load_params(path) -> dict[str, ProcessParams]:
    return params_from_dict(_read_json(path))


def load_fit(path) -> FitResult:
    return fit_from_dict(_read_json(path))


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc


def _write_json(doc, path) -> None:
    # float repr is the shortest round-trip form, so values reload bit-exactly
    text = json.dumps(doc, indent=2, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- observations


def read_observation_rows(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataError(f"{path}: header must be exactly {','.join(CSV_HEADER)}, got {','.join(header)}")
        rows = []
        seen = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            entity, time, process, value = (c.strip() for c in row)
            key = (entity, to_fraction(time), process)
            if key in seen:
                raise DataError(
                    f"{path}: line {lineno}: duplicate (entity, time, process) = ({entity}, {time}, {process}); "
                    f"first seen on line {seen[key]}"
                )
            seen[key] = lineno
            try:
                v = float(value)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: value {value!r} is not a number") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            rows.append((entity, time, process, v))
    return rows


def read_observations(path, structure: ItbnStructure) -> ObservationSet:
    return ObservationSet.from_records(read_observation_rows(path), structure)


def write_observations(data: ObservationSet, structure: ItbnStructure, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for entity, t, p, v in data.to_records(structure):
            w.writerow([entity, format_time(t), p, repr(float(v))])
