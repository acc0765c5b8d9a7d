import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mopasym.cli import main
from mopasym.io import (
    ModelError,
    band_spec_from_dict,
    canonical_hash,
    check_run_config,
    csv_text,
    json_text,
    model_from_dict,
    parse_grid,
    read_csv,
    symbol_from_dict,
)
from oracles import arcsine_density, semicircle_cdf

MODELS = Path(__file__).resolve().parent.parent / "models"


def enc(M):
    return [[[float(np.real(v)), float(np.imag(v))] for v in row] for row in M]


def write_model(tmp_path, doc, name="model.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# -- schema and invariants ---------------------------------------------------

def test_plain_symbol_loads():
    sym = symbol_from_dict(json.loads((MODELS / "s1.json").read_text()))
    assert sym.r == 1 and sym.p == 1


def test_reference_model_files_load():
    kinds = {p.name: model_from_dict(json.loads(p.read_text())).kind
             for p in MODELS.glob("*.json") if not p.name.startswith(("run_", "band_"))}
    assert kinds["s1.json"] == "constant" and kinds["p2.json"] == "periodic"
    assert kinds["sqrt_profile.json"] == "varying"
    assert model_from_dict(json.loads((MODELS / "d2_perturbed.json").read_text())).perturbation


@pytest.mark.parametrize("doc, invariant", [
    ({"r": 1, "A": [[[1, 0]]], "B": [[[0, 0]]], "extra": 1}, "schema"),
    ({"r": 1, "A": [[[1, 0]]]}, "schema"),
    ({"r": 1, "A": [[[1]]], "B": [[[0, 0]]]}, "schema"),
    ({"r": 2, "A": [[[1, 0]]], "B": [[[0, 0]]]}, "block shape"),
    ({"r": 1, "A": [[[0, 0]]], "B": [[[0, 0]]]}, "A nonsingular"),
    ({"r": 2, "A": enc(np.eye(2)), "B": enc([[0, 1], [1.001, 0]])}, "B Hermitian"),
    ({"r": 1, "period": 2, "blocks": [{"A": [[[1, 0]]], "B": [[[0, 0]]]}]}, "period consistency"),
    ({"kind": "periodic", "limit": {"r": 1, "A": [[[1, 0]]], "B": [[[0, 0]]]}}, "period consistency"),
])
def test_model_rejections(doc, invariant):
    with pytest.raises(ModelError) as info:
        model_from_dict(doc)
    assert info.value.invariant == invariant


def test_hermitian_rejection_names_pair():
    doc = {"r": 2, "A": enc(np.eye(2)), "B": enc([[0, 1], [1.001, 0]])}
    with pytest.raises(ModelError) as info:
        model_from_dict(doc)
    assert "(0,1)" in str(info.value) and info.value.details["pair"] == [0, 1]


def test_singular_rejection_reports_det():
    doc = {"r": 2, "A": enc([[1, 2], [2, 4]]), "B": enc(np.zeros((2, 2)))}
    with pytest.raises(ModelError) as info:
        model_from_dict(doc)
    assert "|det A|" in str(info.value) and info.value.details["abs_det_A"] < 1e-12


def test_band_and_run_schemas():
    spec, bins = band_spec_from_dict(json.loads((MODELS / "band_gamma_1_5.json").read_text()))
    assert spec.gammas == (1.0, 5.0) and bins > 0
    for bad in ({"r": 2, "gammas": [1], "n": 4, "seed": 0, "bins": 5},
                {"r": 1, "gammas": [1], "n": 4, "seed": 0},
                {"r": 1, "gammas": [-1], "n": 4, "seed": 0, "bins": 5}):
        with pytest.raises(ModelError):
            band_spec_from_dict(bad)
    with pytest.raises(ModelError):
        check_run_config({"command": "density", "colour": "red"})
    with pytest.raises(ModelError):
        check_run_config({"command": "plot"})


@pytest.mark.parametrize("text", ["1:2", "2:1:5", "0:1:1", "a:1:3", "0:inf:3"])
def test_grid_rejections(text):
    with pytest.raises(ModelError):
        parse_grid(text)


def test_grid_parse():
    assert np.array_equal(parse_grid("-1:1:5"), np.linspace(-1, 1, 5))


# -- serialisation -----------------------------------------------------------

@given(st.lists(st.tuples(st.floats(allow_nan=False), st.floats(allow_nan=True)), min_size=1, max_size=20))
def test_csv_round_trip(rows):
    text = csv_text(["a", "b"], rows, {"k": "v"})
    meta, cols, data = read_csv(text)
    assert meta == {"k": "v"} and cols == ["a", "b"]
    expected = np.array(rows, dtype=float)
    assert np.array_equal(data, expected, equal_nan=True)
    assert csv_text(cols, data, meta) == text


def test_json_text_is_canonical():
    a = json_text({"b": np.float64(0.1), "a": [1 + 2j, math.nan]})
    assert a == json_text({"a": [1 + 2j, math.nan], "b": 0.1})
    assert json.loads(a) == {"a": [[1.0, 2.0], None], "b": 0.1}
    assert canonical_hash({"x": 1, "y": 2}) == canonical_hash({"y": 2, "x": 1})


# -- commands ----------------------------------------------------------------

def test_density_command(tmp_path, capsys):
    out = tmp_path / "d.csv"
    code, _, _ = run(["density", "--model", str(MODELS / "s1.json"), "--grid", "-2.5:2.5:501",
                      "--out", str(out)], capsys)
    assert code == 0
    meta, cols, data = read_csv(str(out))
    assert data.shape == (501, 2) and cols == ["x", "value"]
    outside = np.abs(data[:, 0]) > 2
    assert np.all(data[outside, 1] == 0)
    inside = np.abs(data[:, 0]) < 1.99
    expected = [arcsine_density(x) for x in data[inside, 0]]
    assert np.allclose(data[inside, 1], expected, rtol=1e-9)
    assert {"model", "formula", "config", "version"} <= meta.keys()


def test_ratio_check_command(capsys):
    code, out, _ = run(["ratio-check", "--model", str(MODELS / "d2.json"), "--x", "6",
                        "--n-schedule", "50,100,200,400"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["schedule"] == [50, 100, 200, 400]
    assert doc["final"] <= 1e-6 and len(doc["max_error"]) == 4
    assert doc["det_ratio"]["deviation"] <= 1e-6


def test_band_sim_command(tmp_path, capsys):
    out, summ = tmp_path / "h.csv", tmp_path / "s.json"
    code, _, _ = run(["band-sim", "--r", "1", "--gammas", "1", "--n", "2000", "--seed", "7",
                      "--bins", "60", "--out", str(out), "--summary", str(summ)], capsys)
    assert code == 0
    _, cols, data = read_csv(str(out))
    assert data.shape == (60, 4) and cols[2] == "empirical_density"
    summary = json.loads(summ.read_text())
    assert summary["kolmogorov"] <= 0.03
    assert summary["limit_mass"] == pytest.approx(1.0, abs=1e-3)
    width = data[:, 1] - data[:, 0]
    limit = (semicircle_cdf(data[:, 1], 2.0) - semicircle_cdf(data[:, 0], 2.0)) / width
    assert np.allclose(data[:, 3], limit, atol=1e-6)


def test_gamma0_command(capsys):
    code, out, _ = run(["gamma0", "--model", str(MODELS / "d2.json"), "--format", "json"], capsys)
    assert code == 0
    iv = json.loads(out)["intervals"]
    assert np.allclose(iv, [[-4, -2], [1, 5]], atol=1e-7)


def test_potential_and_periodic_commands(capsys):
    code, out, _ = run(["potential", "--model", str(MODELS / "s1.json"), "--grid", "3:4:2"], capsys)
    assert code == 0
    assert read_csv(out)[2][0, 1] == pytest.approx(-0.962424, abs=1e-6)
    code, out, _ = run(["periodic-density", "--model", str(MODELS / "p2.json"), "--grid", "-2:2:9"],
                       capsys)
    assert code == 0
    data = read_csv(out)[2]
    assert data[0, 1] == 0 and data[4, 1] == 0 and data[6, 1] > 0


def test_chebyshev_and_dls_commands(capsys):
    code, out, _ = run(["chebyshev", "--model", str(MODELS / "s1.json"), "--grid", "3:4:2",
                        "--quantity", "stieltjes"], capsys)
    assert code == 0
    assert read_csv(out)[2][0, 1] == pytest.approx(0.381966, abs=1e-6)
    code, out, _ = run(["dls-check", "--model", str(MODELS / "d2.json"), "--grid", "-5:6:23"],
                       capsys)
    assert code == 0
    meta = read_csv(out)[0]
    assert float(meta["max_gap"]) <= 1e-6


def test_dls_check_failure_exit(capsys):
    code, _, err = run(["dls-check", "--model", str(MODELS / "d2.json"), "--grid", "1.5:4.5:4",
                        "--tol", "0"], capsys)
    assert code == 3 and json.loads(err)["type"] == "ReconciliationGap"


def test_varying_density_command(capsys):
    code, out, _ = run(["varying-density", "--model", str(MODELS / "sqrt_profile.json"),
                        "--grid", "0:1:2"], capsys)
    assert code == 0
    data = read_csv(out)[2]
    assert data[:, 1] == pytest.approx([1 / math.pi, math.sqrt(3) / (2 * math.pi)], abs=1e-9)


def test_validate_command(tmp_path, capsys):
    code, out, _ = run(["validate", "--model", str(MODELS / "s1.json")], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["status"] == "ok" and np.allclose(report["gamma0_hull"], [-2, 2], atol=1e-8)
    bad = write_model(tmp_path, {"r": 2, "A": enc(np.eye(2)), "B": enc([[0, 1], [1.001, 0]])})
    code, _, err = run(["validate", "--model", bad], capsys)
    assert code == 2
    diag = json.loads(err)
    assert diag["invariant"] == "B Hermitian" and diag["pair"] == [0, 1]
    bad = write_model(tmp_path, {"r": 1, "A": [[[0, 0]]], "B": [[[0, 0]]]})
    code, _, err = run(["validate", "--model", bad], capsys)
    assert code == 2 and "|det A|" in json.loads(err)["error"]


@pytest.mark.parametrize("argv", [
    ["density", "--model", "missing.json", "--grid", "0:1:3"],
    ["density", "--model", str(MODELS / "s1.json"), "--grid", "1:0:3"],
    ["density", "--model", str(MODELS / "s1.json")],
    ["ratio-check", "--model", str(MODELS / "s1.json"), "--x", "3", "--n-schedule", "0,5"],
    ["chebyshev", "--model", str(MODELS / "p2.json"), "--grid", "0:1:3"],
    ["band-sim", "--r", "1"],
    ["band-sim", "--r", "2", "--gammas", "1", "--n", "10", "--seed", "1"],
])
def test_bad_configuration_exits_2(argv, capsys):
    assert run(argv, capsys)[0] == 2


def test_numerical_failure_exits_3(capsys):
    code, _, err = run(["ratio-check", "--model", str(MODELS / "s1.json"), "--x", "0",
                        "--n-schedule", "1"], capsys)
    assert code == 3
    assert json.loads(err)["status"] == "numerical failure"


def test_branch_points_become_nan(capsys):
    code, out, _ = run(["density", "--model", str(MODELS / "s1.json"), "--grid", "-2:2:3"], capsys)
    meta, _, data = read_csv(out)
    assert code == 0 and int(meta["excluded"]) == 2 and np.isnan(data[[0, 2], 1]).all()


def test_run_config(tmp_path, capsys):
    cfg = json.loads((MODELS / "run_density.json").read_text())
    cfg["model"] = str(MODELS / cfg["model"])
    cfg["out"] = "out.csv"
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert run(["run", "--config", str(path)], capsys)[0] == 0
    assert read_csv(str(tmp_path / "out.csv"))[2].shape == (501, 2)
    path.write_text(json.dumps({**cfg, "unknown": 1}))
    assert run(["run", "--config", str(path)], capsys)[0] == 2


def test_thread_variable(monkeypatch, capsys):
    argv = ["gamma0", "--model", str(MODELS / "s1.json")]
    monkeypatch.setenv("MOPASYM_THREADS", "1")
    code, out1, _ = run(argv, capsys)
    assert code == 0
    monkeypatch.setenv("MOPASYM_THREADS", "0")
    assert run(argv, capsys)[0] == 2
    monkeypatch.delenv("MOPASYM_THREADS")
    assert run(argv, capsys)[1] == out1


def test_output_independent_of_model_location(tmp_path, capsys):
    copy = tmp_path / "elsewhere.json"
    copy.write_text((MODELS / "s1.json").read_text())
    grid = ["--grid", "-1:1:5"]
    a = run(["density", "--model", str(MODELS / "s1.json"), *grid], capsys)[1]
    b = run(["density", "--model", str(copy), *grid], capsys)[1]
    assert a == b


def test_installed_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mopasym", "gamma0", "--model", str(MODELS / "s1.json")],
                          capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0 and proc.stdout.splitlines()[1] == "left,right"
