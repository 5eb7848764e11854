import json
from fractions import Fraction

import numpy as np
import pytest

from golden_cases import CASES, GOLDEN, golden_paths, run_case, texts_match
from itbn import io
from itbn.cli import main
from itbn.learn import fit_fully_observed
from itbn.model import ModelError
from itbn.observations import DataError
from itbn.synthetic import glucose_like_corpus, glucose_like_model, mixed_three_process
from itbn.infer import sample_paths
from itbn.timegrid import simulate_geometric_timeline, Timeline


# --------------------------------------------------------------------------- golden files


@pytest.mark.parametrize("name,argv,out_files", CASES, ids=[c[0] for c in CASES])
def test_golden(name, argv, out_files, tmp_path):
    result = run_case(argv, out_files, tmp_path)
    paths = golden_paths(name, out_files)
    assert result["exit_code"] == int(paths["exit_code"].read_text())
    assert texts_match(paths["stdout"].read_text(), result["stdout"])
    assert texts_match(paths["stderr"].read_text(), result["stderr"])
    for f in out_files:
        assert texts_match(paths[f].read_text(), result["files"][f]), f


@pytest.mark.parametrize("name,argv,out_files", [c for c in CASES if c[0] in ("fit", "simulate_geometric", "find_time_mc")])
def test_commands_deterministic(name, argv, out_files, tmp_path):
    runs = []
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        runs.append(run_case(argv, out_files, tmp_path / sub))
    a, b = runs
    assert a["stdout"] == b["stdout"]
    assert a["files"] == b["files"]


def test_texts_match_tolerance():
    assert texts_match("x 1.0 y", "x 1.0000000000001 y")
    assert not texts_match("x 1.0 y", "x 1.01 y")
    assert not texts_match("x 1.0 y", "z 1.0 y")


# --------------------------------------------------------------------------- serialization


@pytest.mark.parametrize("t,text", [(0, "0"), (Fraction(1, 4), "0.25"), (Fraction(-3, 2), "-1.5"), (12, "12"),
                                    (Fraction(1, 3), repr(1 / 3))])
def test_format_time(t, text):
    assert io.format_time(t) == text


def _assert_fits_identical(a, b):
    assert a.options == b.options and a.diagnostics == b.diagnostics
    assert a.loglik == b.loglik and a.objective == b.objective
    for name, fa in a.processes.items():
        fb = b.processes[name]
        for attr in ("family", "n_rows", "edf", "loglik", "initial_loglik", "objective", "penalized_loglik",
                     "diagnostics"):
            assert getattr(fa, attr) == getattr(fb, attr), attr
        assert np.array_equal(fa.standard_errors, fb.standard_errors)
        assert np.array_equal(fa.covariance, fb.covariance)
        ca, cb = fa.params.cpd, fb.params.cpd
        for sa, sb in ((ca.alpha, cb.alpha), (ca.beta, cb.beta)):
            assert (sa is None) == (sb is None)
            if sa is not None:
                assert sa.degree == sb.degree and tuple(sa.knots) == tuple(sb.knots)
                assert np.array_equal(sa.coefficients, sb.coefficients)
        assert np.array_equal(ca.gamma, cb.gamma)
        assert getattr(ca, "tau", None) == getattr(cb, "tau", None)
        assert fa.params.initial == fb.params.initial


@pytest.mark.parametrize("seed", [0, 1])
def test_fit_roundtrip_bit_exact(seed, tmp_path):
    structure, params = mixed_three_process(seed)
    rng = np.random.default_rng(seed)
    tl = simulate_geometric_timeline(250, 0.4, rng)
    tl = Timeline(tl.ticks, structure.resolution)
    data = sample_paths(structure, params, tl, 1, rng)
    fit = fit_fully_observed(structure, data)
    io.save_fit(fit, tmp_path / "fit.json")
    back = io.load_fit(tmp_path / "fit.json")
    _assert_fits_identical(fit, back)
    io.save_fit(back, tmp_path / "again.json")
    assert (tmp_path / "fit.json").read_text() == (tmp_path / "again.json").read_text()


def test_model_roundtrip(tmp_path):
    structure, _ = mixed_three_process(0)
    io.save_model(structure, tmp_path / "m.json")
    back = io.load_model(tmp_path / "m.json")
    assert io.model_to_dict(back) == io.model_to_dict(structure)
    assert back.resolution == structure.resolution


def test_model_spec_errors():
    with pytest.raises(ModelError):
        io.model_from_dict({"edges": []})
    with pytest.raises(ModelError):
        io.model_from_dict({"processes": [{"name": "A"}], "cpds": {"B": {}}})


def test_observations_roundtrip(tmp_path):
    structure, _ = glucose_like_model()
    data = glucose_like_corpus(seed=2, entities=3, observations=10)
    io.write_observations(data, structure, tmp_path / "d.csv")
    back = io.read_observations(tmp_path / "d.csv", structure)
    assert sorted(map(str, back.entities)) == sorted(map(str, data.entities))
    for e, ed in data:
        assert back.entities[e].timeline.ticks == ed.timeline.ticks
        assert back.entities[e].values == ed.values


# --------------------------------------------------------------------------- CSV ingestion


def _csv(tmp_path, text):
    path = tmp_path / "obs.csv"
    path.write_text(text)
    return path


@pytest.mark.parametrize("header", ["entity,time,value,process", "id,time,process,value", "entity,time,process"])
def test_header_must_match(header, tmp_path):
    with pytest.raises(DataError, match="header"):
        io.read_observation_rows(_csv(tmp_path, header + "\n"))


def test_duplicate_reports_row_numbers(tmp_path):
    text = "entity,time,process,value\na,0,X,1\na,1,X,2\na,1.0,X,3\n"
    with pytest.raises(DataError, match=r"line 4: duplicate .*first seen on line 3"):
        io.read_observation_rows(_csv(tmp_path, text))


def test_same_time_other_entity_is_not_duplicate(tmp_path):
    text = "entity,time,process,value\na,0,X,1\nb,0,X,2\na,0,Y,3\n"
    assert len(io.read_observation_rows(_csv(tmp_path, text))) == 3


@pytest.mark.parametrize("row,msg", [("a,0,X", "expected 4 fields"), ("a,0,X,abc", "not a number"),
                                     ("a,0,X,nan", "non-finite")])
def test_bad_rows(row, msg, tmp_path):
    with pytest.raises(DataError, match=msg):
        io.read_observation_rows(_csv(tmp_path, "entity,time,process,value\n" + row + "\n"))


def test_empty_file(tmp_path):
    with pytest.raises(DataError, match="empty"):
        io.read_observation_rows(_csv(tmp_path, ""))


# --------------------------------------------------------------------------- CLI contract


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_loglik_empty_is_zero(capsys):
    g = GOLDEN
    code, out, _ = _run(["loglik", "--model", f"{g}/model.json", "--params", f"{g}/params.json",
                         "--data", f"{g}/empty.csv"], capsys)
    assert code == 0 and float(out) == 0.0


@pytest.mark.parametrize("argv,code,error", [
    ([], 1, "UsageError"),
    (["nope"], 1, "UsageError"),
    (["loglik", "--model", "missing.json", "--params", "x", "--data", "y"], 2, "FileNotFoundError"),
    (["fit", "--model", f"{GOLDEN}/model.json", "--data", f"{GOLDEN}/data.csv", "--out", "x",
      "--select-knots", "3..1"], 1, "UsageError"),
    (["simulate", "--model", f"{GOLDEN}/model.json", "--params", f"{GOLDEN}/params.json",
      "--geometric", "ten", "--out", "x"], 1, "UsageError"),
    (["smooth", "--model", f"{GOLDEN}/model.json", "--params", f"{GOLDEN}/params.json",
      "--data", f"{GOLDEN}/data.csv", "--entity", "zz", "--out", "x"], 2, "DataError"),
])
def test_error_exit_codes(argv, code, error, capsys):
    got, out, err = _run(argv, capsys)
    assert got == code
    doc = json.loads(err)
    assert doc["error"] == error and doc["exit_code"] == code and doc["message"]
    assert out == ""


def test_select_knots_recorded(tmp_path, capsys):
    g = GOLDEN
    code, _, _ = _run(["fit", "--model", f"{g}/model.json", "--data", f"{g}/data.csv", "--out",
                       tmp_path / "f.json", "--select-knots", "0..2", "--interpolate-parents"], capsys)
    assert code == 0
    fit = io.load_fit(tmp_path / "f.json")
    sel = fit.options["knot_selection"]["glucose"]
    assert sel["alpha_knots"] in (0, 1, 2) and set(sel["aicc"]) == {"0", "1", "2"}
    assert fit.options["interpolate_parents"] is True
    assert len(fit.params["glucose"].cpd.alpha.knots) == sel["alpha_knots"]


def test_fit_on_simulated_recovers_parameters(tmp_path, capsys):
    structure, params = glucose_like_model()
    spec = io.model_to_dict(structure)
    # fixed knots at the generating location, so coefficients are comparable
    for part in ("alpha", "beta"):
        spec["cpds"]["glucose"][part] = {"degree": 1, "knots": [3.0], "count": 1}
    spec["cpds"]["glucose"]["lambda"] = 0.0
    (tmp_path / "model.json").write_text(json.dumps(spec))
    (tmp_path / "params.json").write_text(json.dumps({"processes": io.params_to_dict(params)}))
    code, _, _ = _run(["simulate", "--model", tmp_path / "model.json", "--params", tmp_path / "params.json",
                       "--geometric", "400,0.23", "--entities", "6", "--seed", "1", "--out", tmp_path / "sim.csv"],
                      capsys)
    assert code == 0
    code, _, _ = _run(["fit", "--model", tmp_path / "model.json", "--data", tmp_path / "sim.csv",
                       "--out", tmp_path / "fit.json"], capsys)
    assert code == 0
    fit = io.load_fit(tmp_path / "fit.json")
    pf = fit.processes["glucose"]
    truth = np.concatenate([params["glucose"].cpd.alpha.coefficients, params["glucose"].cpd.beta.coefficients])
    est = np.concatenate([pf.params.cpd.alpha.coefficients, pf.params.cpd.beta.coefficients])
    assert np.all(np.abs(est - truth) <= 3 * pf.standard_errors[: truth.size])


@pytest.mark.slow
def test_prop3_sim_ratio_half(capsys):
    code, out, _ = _run(["prop3-sim", "--n", "10000", "--p", "0.5", "--reps", "20", "--seed", "0", "--json"],
                        capsys)
    assert code == 0
    (row,) = json.loads(out)
    assert abs(row["mean_ratio"] - 2.0) <= 0.05


def test_size_compare_glucose_like(tmp_path, capsys):
    structure, _ = glucose_like_model()
    io.write_observations(glucose_like_corpus(), structure, tmp_path / "g.csv")
    code, out, _ = _run(["size-compare", "--data", tmp_path / "g.csv", "--model", f"{GOLDEN}/model.json",
                         "--json"], capsys)
    assert code == 0
    total = json.loads(out)["total"]
    assert total["itbn_nodes"] == 6 * 63 < total["dbn_nodes"]
