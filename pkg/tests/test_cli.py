import json
from importlib import resources

import jsonschema

from engelflow.cli import main
from tests.conftest import DEGENERATE, MODEL, TRANSVERSE


def _schema():
    ref = resources.files("engelflow") / "schemas" / "report.schema.json"
    return json.loads(ref.read_text())


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main(list(argv) + ["--out", str(out)])
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, _schema())
    return code, doc, out


def test_analyze_exit_codes_and_reports(tmp_path):
    code, doc, _ = _run(tmp_path, "ok.json", "analyze", "--poly", "3*x1 + x2 + 5")
    assert code == 0
    assert doc["certificates"]["md_no_fiber_horizontal"] is True
    assert doc["schema_version"] == 1

    code2, doc2, _ = _run(tmp_path, "bad.json", "analyze", "--poly", DEGENERATE)
    assert code2 == 2
    assert doc2["certificates"]["md_no_fiber_horizontal"] is False
    assert doc2["certificates"]["kappa_in_box"] == 1


def test_analyze_transverse_summary(tmp_path):
    code, doc, _ = _run(tmp_path, "t.json", "analyze", "--poly", TRANSVERSE)
    cert = doc["certificates"]
    assert cert["lambda_in_box"] == 1 and cert["kappa_in_box"] == 0
    assert cert["md_no_fiber_horizontal"] is True
    assert cert["cd_bound"] == 54


def test_gamma_report_carries_polyline(tmp_path):
    code, doc, _ = _run(tmp_path, "g.json", "gamma", "--poly", DEGENERATE)
    assert code == 0
    assert len(doc["gamma"]) == 1
    comp = doc["gamma"][0]
    assert comp["classification"] == "FiberContained"
    assert comp["horizontal"] is True
    assert len(comp["polyline"]) == comp["n_points"] > 10


def test_loja_quadratic_model(tmp_path):
    code, doc, _ = _run(
        tmp_path, "l.json", "loja", "--poly", MODEL, "--box=-1,1,-1,1,-1,1,-1,1"
    )
    assert code == 0
    assert abs(doc["loja"]["C1"] - 1.0) <= 1e-6
    assert abs(doc["loja"]["C2"] - 1.0) <= 1e-6


def test_flow_report_and_determinism(tmp_path):
    args = (
        "flow", "--poly", MODEL,
        "--box=-1,1,-1,1,-1,1,-1,1",
        "--seeds", "3", "--seed", "2",
    )
    code, doc, out1 = _run(tmp_path, "f1.json", *args)
    assert code == 0
    assert len(doc["flows"]) == 6
    assert all(rec["converged"] for rec in doc["flows"])
    _, _, out2 = _run(tmp_path, "f2.json", *args)
    assert out1.read_bytes() == out2.read_bytes()


def test_analyze_determinism(tmp_path):
    args = ("analyze", "--poly", TRANSVERSE, "--seed", "3")
    _, _, a = _run(tmp_path, "a1.json", *args)
    _, _, b = _run(tmp_path, "a2.json", *args)
    assert a.read_bytes() == b.read_bytes()


def test_flow_csv_mode(tmp_path):
    outdir = tmp_path / "trajs"
    code = main([
        "flow", "--poly", MODEL,
        "--box=-1,1,-1,1,-1,1,-1,1",
        "--seeds", "2", "--format", "csv", "--out", str(outdir),
    ])
    assert code == 0
    files = sorted(p.name for p in outdir.iterdir())
    assert files == [
        "traj_000_ascent.csv",
        "traj_000_descent.csv",
        "traj_001_ascent.csv",
        "traj_001_descent.csv",
    ]
    header = (outdir / files[0]).read_text().split("\n", 1)[0]
    assert header == "t,x1,x2,x3,x4,f,grad_norm,dist_vf,lg_cum,ldelta_cum"


def test_repair_command(tmp_path):
    code, doc, _ = _run(
        tmp_path, "r.json", "repair", "--poly", DEGENERATE,
        "--box=-1,1,-1,1,-1,1,-1,1",
    )
    assert code == 0
    rep = doc["repair"]
    assert rep["changed"] is True
    assert rep["input_polynomial"] != rep["output_polynomial"]
    assert doc["polynomial"] == rep["output_polynomial"]
    events = [e["event"] for e in rep["log"]]
    assert "HypothesisFailure" in events and "Fallback" in events


def test_poly_file_input(tmp_path):
    pf = tmp_path / "poly.txt"
    pf.write_text(TRANSVERSE + "\n")
    _, from_file, _ = _run(tmp_path, "pf.json", "analyze", "--poly-file", str(pf))
    _, from_flag, _ = _run(tmp_path, "pt.json", "analyze", "--poly", TRANSVERSE)
    assert from_file == from_flag


def test_error_exit_codes(tmp_path, capsys):
    assert main(["analyze", "--poly", "x9 + 1"]) == 1
    assert main(["analyze", "--poly", "x1", "--box", "0,1,0,1"]) == 1
    assert main(["analyze", "--poly", "x1", "--format", "csv"]) == 1
    assert main(["analyze"]) == 1  # missing polynomial source
    assert main(["loja", "--poly", "x1 + x2"]) == 1  # empty critical surface
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    capsys.readouterr()
