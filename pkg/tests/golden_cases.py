"""Golden-file cases for every CLI command.

Each case is ``(name, argv, out_files)``. ``{g}`` expands to the golden
directory (inputs) and ``{tmp}`` to a scratch directory (outputs). Running a
case captures the exit code, stdout and every output file; JSON stdout has
wall-clock fields removed.
"""

from __future__ import annotations

import contextlib
import io
import json
import re
from pathlib import Path

from itbn.cli import main

GOLDEN = Path(__file__).parent / "golden"
VOLATILE_KEYS = {"seconds", "out"}

CASES = [
    ("validate", ["validate", "--model", "{g}/model.json"], []),
    ("validate_bad", ["validate", "--model", "{g}/model_cycle.json"], []),
    ("fit", ["fit", "--model", "{g}/model.json", "--data", "{g}/data.csv", "--out", "{tmp}/fit.json"], ["fit.json"]),
    ("fit_select", ["fit", "--model", "{g}/model.json", "--data", "{g}/data.csv", "--out", "{tmp}/fit.json",
                    "--select-knots", "0..2"], ["fit.json"]),
    ("loglik", ["loglik", "--model", "{g}/model.json", "--params", "{g}/params.json", "--data", "{g}/data.csv"], []),
    ("loglik_empty", ["loglik", "--model", "{g}/model.json", "--params", "{g}/params.json",
                      "--data", "{g}/empty.csv"], []),
    ("smooth", ["smooth", "--model", "{g}/sensor_model.json", "--params", "{g}/sensor_params.json", "--data", "{g}/sparse.csv",
                "--entity", "s1", "--out", "{tmp}/smooth.csv"], ["smooth.csv"]),
    ("predict", ["predict", "--model", "{g}/model.json", "--params", "{g}/params.json", "--data", "{g}/data.csv",
                 "--entity", "s2", "--at", "40"], []),
    ("find_time", ["find-time", "--model", "{g}/model.json", "--params", "{g}/params.json", "--data",
                   "{g}/data.csv", "--entity", "s1", "--process", "glucose", "--slice", "3", "--target", "{target}",
                   "--bracket", "{lo}", "{hi}"], []),
    ("find_time_quantile_no_root", ["find-time", "--model", "{g}/model.json", "--params", "{g}/params.json", "--data",
                            "{g}/data.csv", "--entity", "s1", "--process", "glucose", "--slice", "3",
                            "--target", "{target}", "--bracket", "{lo}", "{hi}", "--quantile", "0.9"], []),
    ("find_time_mc", ["find-time", "--model", "{g}/model.json", "--params", "{g}/params.json", "--data",
                      "{g}/data.csv", "--entity", "s1", "--process", "glucose", "--slice", "3", "--target",
                      "{target}", "--bracket", "{lo}", "{hi}", "--mc", "4096", "--seed", "7", "--tol", "1e-6"], []),
    ("size_compare", ["size-compare", "--data", "{g}/data.csv", "--resolution", "0.25"], []),
    ("size_compare_json", ["size-compare", "--data", "{g}/data.csv", "--model", "{g}/model.json",
                           "--hidden-processes", "2", "--json"], []),
    ("prop3_sim", ["prop3-sim", "--n", "1000", "--p", "0.2", "0.5", "--reps", "5", "--seed", "3", "--json"], []),
    ("simulate_timeline", ["simulate", "--model", "{g}/model.json", "--params", "{g}/params.json",
                           "--timeline", "{g}/timeline.csv", "--entities", "2", "--seed", "5",
                           "--out", "{tmp}/sim.csv"], ["sim.csv"]),
    ("simulate_geometric", ["simulate", "--model", "{g}/model.json", "--params", "{g}/params.json",
                            "--geometric", "12,0.4", "--entities", "2", "--seed", "5", "--out", "{tmp}/sim.csv"],
     ["sim.csv"]),
    ("plot", ["plot", "--model", "{g}/sensor_model.json", "--params", "{g}/sensor_params.json", "--data", "{g}/sparse.csv",
              "--entity", "s1", "--grid", "0.5", "--out", "{tmp}/plot.csv", "--svg", "{tmp}/plot.svg"],
     ["plot.csv", "plot.svg"]),
    ("error_usage", ["fit", "--model", "{g}/model.json"], []),
    ("error_duplicate", ["loglik", "--model", "{g}/model.json", "--params", "{g}/params.json",
                         "--data", "{g}/duplicate.csv"], []),
]



def _load_find_time() -> dict:
    path = GOLDEN / "find_time_query.json"
    return json.loads(path.read_text()) if path.exists() else {}


def expand(argv, tmp) -> list[str]:
    subs = {"g": str(GOLDEN), "tmp": str(tmp), **{k: str(v) for k, v in _load_find_time().items()}}
    return [a.format(**subs) if "{" in a else a for a in argv]


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def normalize_stdout(text: str) -> str:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return text
    return json.dumps(_strip(doc), indent=2) + "\n"


def run_case(argv, out_files, tmp) -> dict:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(expand(argv, tmp))
    stderr = err.getvalue().replace(str(GOLDEN), "{g}").replace(str(tmp), "{tmp}")
    result = {"exit_code": code, "stdout": normalize_stdout(out.getvalue()), "stderr": stderr, "files": {}}
    for f in out_files:
        result["files"][f] = (Path(tmp) / f).read_text(encoding="utf-8")
    return result


def golden_paths(name: str, out_files) -> dict:
    paths = {"exit_code": GOLDEN / f"{name}.exit", "stdout": GOLDEN / f"{name}.stdout",
             "stderr": GOLDEN / f"{name}.stderr"}
    for f in out_files:
        paths[f] = GOLDEN / f"{name}.{f}"
    return paths


def write_golden(name, out_files, result) -> None:
    paths = golden_paths(name, out_files)
    paths["exit_code"].write_text(f"{result['exit_code']}\n")
    paths["stdout"].write_text(result["stdout"])
    paths["stderr"].write_text(result["stderr"])
    for f in out_files:
        paths[f].write_text(result["files"][f])


_NUM = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?|nan|inf")


def texts_match(expected: str, actual: str, rel=1e-9, abs_=1e-12) -> bool:
    """Equal up to floating-point noise in every number; all other text identical."""
    if _NUM.sub("#", expected) != _NUM.sub("#", actual):
        return False
    for a, b in zip(_NUM.findall(expected), _NUM.findall(actual)):
        if a == b:
            continue
        x, y = float(a), float(b)
        if not abs(x - y) <= max(abs_, rel * max(abs(x), abs(y))):
            return False
    return True
