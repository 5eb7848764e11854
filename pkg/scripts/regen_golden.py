"""Rebuild the CLI golden files under tests/golden.

    python3 scripts/regen_golden.py            # outputs only
    python3 scripts/regen_golden.py --inputs   # inputs too (deterministic)

Review the diff before committing regenerated files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from golden_cases import CASES, GOLDEN, run_case, write_golden  # noqa: E402
from itbn import io  # noqa: E402
from itbn.model import (  # noqa: E402
    EdgeDecl,
    GaussianInitial,
    GaussianLinearCpd,
    ItbnStructure,
    ProcessDecl,
    ProcessParams,
    ProcessSpec,
    SplineConfig,
)
from itbn.splines import SplineSpec  # noqa: E402
from itbn.synthetic import glucose_like_corpus, glucose_like_model  # noqa: E402
from itbn.timefind import FreeSlice, TimeQuery, conditional_mean  # noqa: E402


def sensor_model():
    """Hidden level G read through a noisy sensor S in the same slice."""
    structure = ItbnStructure(
        [ProcessDecl("G", "gaussian"), ProcessDecl("S", "gaussian")],
        [EdgeDecl("G", "G", "previous", 0, "autoregressive"), EdgeDecl("G", "S", "intra", 0)],
        {"G": ProcessSpec(SplineConfig(1, "auto", 1), SplineConfig(0, "auto", 0), 0.1),
         "S": ProcessSpec(SplineConfig(0, "auto", 0), SplineConfig(0, "auto", 0), 0.1)},
        Fraction(1, 4),
    )
    params = {
        "G": ProcessParams(GaussianLinearCpd(SplineSpec(1, (2.0,), np.array([0.6, 0.3, -0.3])),
                                             SplineSpec.constant(0.9), np.zeros(0), 2.0), GaussianInitial(6.0, 1.0)),
        "S": ProcessParams(GaussianLinearCpd(SplineSpec.constant(0.0), None, np.array([1.0]), 10.0),
                           GaussianInitial(0.0, 10.0)),
    }
    return structure, params


def build_inputs() -> None:
    GOLDEN.mkdir(exist_ok=True)
    structure, params = glucose_like_model()
    io.save_model(structure, GOLDEN / "model.json")
    (GOLDEN / "params.json").write_text(json.dumps(
        {"format": io.PARAMS_FORMAT, "processes": io.params_to_dict(params)}, indent=2) + "\n")
    data = glucose_like_corpus(seed=11, entities=2, observations=20)
    io.write_observations(data, structure, GOLDEN / "data.csv")
    (GOLDEN / "empty.csv").write_text(",".join(io.CSV_HEADER) + "\n")
    lines = (GOLDEN / "data.csv").read_text().splitlines()
    (GOLDEN / "duplicate.csv").write_text("\n".join(lines[:6] + [lines[3]] + lines[6:]) + "\n")

    cycle = {"resolution": "1", "processes": [{"name": "A"}, {"name": "B"}],
             "edges": [{"parent": "A", "child": "B"}, {"parent": "B", "child": "A"}]}
    (GOLDEN / "model_cycle.json").write_text(json.dumps(cycle, indent=2) + "\n")

    with open(GOLDEN / "timeline.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"])
        for t in ["0", "0.5", "1.25", "3", "3.5", "6", "6.75", "9"]:
            w.writerow([t])

    # sensor model: S read at every slice, G only at a few
    s2, p2 = sensor_model()
    io.save_model(s2, GOLDEN / "sensor_model.json")
    (GOLDEN / "sensor_params.json").write_text(json.dumps(
        {"format": io.PARAMS_FORMAT, "processes": io.params_to_dict(p2)}, indent=2) + "\n")
    rng = np.random.default_rng(4)
    times = [Fraction(0), Fraction(1, 2), Fraction(7, 4), Fraction(3), Fraction(9, 2), Fraction(5), Fraction(13, 2)]
    with open(GOLDEN / "sparse.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(io.CSV_HEADER)
        g = 6.0
        for j, t in enumerate(times):
            g = 0.9 * g + 0.6 + rng.normal(0, 0.5) if j else g
            if j in (0, 4):
                w.writerow(["s1", io.format_time(t), "G", repr(round(g, 3))])
            w.writerow(["s1", io.format_time(t), "S", repr(round(g + rng.normal(0, 0.3), 3))])

    # find-time target: the conditional mean a third of the way into slice 3's gap
    ed = data.entities["s1"]
    free = FreeSlice(structure, params, ed.timeline, dict(ed.values))
    lo, hi = float(ed.timeline.exact_times[2]), float(ed.timeline.exact_times[3])
    t_true = lo + (hi - lo) / 3
    target = conditional_mean(free, TimeQuery("glucose", 3, (lo, hi), 0.0), t_true)
    (GOLDEN / "find_time_query.json").write_text(json.dumps(
        {"target": target, "lo": lo, "hi": hi, "t_true": t_true}, indent=2) + "\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--inputs", action="store_true", help="rebuild the input files as well")
    args = ap.parse_args()
    if args.inputs:
        build_inputs()
    for name, argv, out_files in CASES:
        with tempfile.TemporaryDirectory() as tmp:
            result = run_case(argv, out_files, tmp)
        write_golden(name, out_files, result)
        print(f"{name}: exit {result['exit_code']}")


if __name__ == "__main__":
    main()
