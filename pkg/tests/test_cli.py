import csv
import io
import json
from importlib import resources

import pytest

from conftest import load_data
from supnoninf.cli import main
from supnoninf.manifest import MANIFEST_PREFIX, read_manifest, strip_timestamp
from supnoninf.specdoc import SpecValidationError, validate_spec


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def data_path(name):
    return str(resources.files("supnoninf.data").joinpath(name))


def csv_body(text):
    return list(csv.DictReader(io.StringIO("".join(l + "\n" for l in text.splitlines()[1:]))))


def test_adjust_alpha_example(capsys):
    code, out, _ = run(capsys, "adjust-alpha", "--m", "2", "--rho", "0.5", "--c", "2.0", "--d", "10")
    assert code == 0
    doc = json.loads(out)
    assert doc["manifest"]["command"] == "adjust-alpha"
    assert doc["result"]["alpha_prime"] == pytest.approx(0.0293, abs=1e-3)


def test_adjust_alpha_with_matrix_file(capsys, tmp_path):
    f = tmp_path / "r.csv"
    f.write_text("a,b\n1,0.4311\n0.4311,1\n")
    code, out, _ = run(capsys, "adjust-alpha", "--corr", str(f), "--c", "1.2380,2.1409", "--d", "651",
                       "--alpha", "0.025", "--diagnostics")
    assert code == 0
    doc = json.loads(out)["result"]
    assert 0.0125 <= doc["alpha_prime"] <= 0.025
    assert len(doc["trace"]) >= 2


def test_analyze_example_two(capsys):
    code, out, _ = run(capsys, "analyze", "--spec", data_path("example2.json"))
    assert code == 0
    res = json.loads(out)["result"]
    assert res["overall_success"] is True
    assert res["superior_endpoints"] == [1, 3]


def test_power_and_sample_size(capsys, tmp_path):
    spec = {
        "endpoints": [{"pooled_sd": 1.0, "n_trt": 100, "n_ctl": 100}] * 2,
        "margins": {"epsilon": [0, 0], "eta": [0.2, 0.2]},
        "alpha": 0.05, "correlation": {"rho": 0.5}, "theta1": [0.33, 0.33], "target_power": 0.8,
    }
    f = tmp_path / "p.json"
    f.write_text(json.dumps(spec))
    code, out, _ = run(capsys, "power", "--spec", str(f))
    assert code == 0
    assert json.loads(out)["result"]["power"] == pytest.approx(0.808, abs=0.015)
    code, out, _ = run(capsys, "sample-size", "--spec", str(f))
    assert code == 0
    assert json.loads(out)["result"]["power"] >= 0.8


def test_table1_and_replay(capsys, tmp_path):
    out_file = tmp_path / "t1.csv"
    code, _, _ = run(capsys, "table1", "--m", "2", "--rho", "0.5", "--c", "2.0", "--d", "10",
                     "--out", str(out_file))
    assert code == 0
    text = out_file.read_text()
    assert text.startswith(MANIFEST_PREFIX)
    rows = csv_body(text)
    assert list(rows[0]) == ["m", "rho", "c", "d", "alpha", "alpha_prime", "critical_value"]
    assert float(rows[0]["alpha_prime"]) == pytest.approx(0.0293, abs=1e-3)
    again = tmp_path / "again.csv"
    assert run(capsys, "replay", "--artifact", str(out_file), "--out", str(again))[0] == 0
    assert strip_timestamp(again.read_text()) == strip_timestamp(text)


def test_replay_keeps_precision(capsys, tmp_path):
    first = tmp_path / "a.json"
    run(capsys, "adjust-alpha", "--m", "3", "--rho", "0.2", "--c", "1.0", "--d", "40", "--full-precision",
        "--out", str(first))
    second = tmp_path / "b.json"
    assert run(capsys, "replay", "--artifact", str(first), "--out", str(second))[0] == 0
    assert strip_timestamp(first.read_text()) == strip_timestamp(second.read_text())
    assert len(repr(json.loads(first.read_text())["result"]["alpha_prime"])) > 9


def test_figure1_and_rho0(capsys, tmp_path):
    code, out, _ = run(capsys, "figure1", "--m", "2", "--rho", "0", "--steps", "5")
    assert code == 0
    assert len(csv_body(out)) == 5
    f = tmp_path / "r.csv"
    f.write_text("1\n0.31,1\n0.25,0.42,1\n0.24,0.67,0.43,1\n")
    code, out, _ = run(capsys, "rho0", "--corr", str(f))
    assert code == 0
    assert json.loads(out)["result"]["rho0"] == pytest.approx(0.4298, abs=1e-4)


def test_simulate_scenario_file_and_replay(capsys, tmp_path):
    f = tmp_path / "s.json"
    f.write_text(json.dumps([{"rho": 0.5, "margin_c": 0.5, "theta": [0.3, 0.0]}]))
    art = tmp_path / "sim.csv"
    code, _, _ = run(capsys, "simulate", "--scenarios", str(f), "--reps", "20", "--boot-reps", "100",
                     "--out", str(art))
    assert code == 0
    rows = csv_body(art.read_text())
    assert {r["method"] for r in rows} == {"CCZQ", "TL", "PW", "BLT"}
    assert read_manifest(art.read_text()).params["reps"] == 20
    again = tmp_path / "again.csv"
    run(capsys, "replay", "--artifact", str(art), "--out", str(again), "--threads", "2")
    assert strip_timestamp(again.read_text()) == strip_timestamp(art.read_text())


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "adjust-alpha", "--bogus")[0] == 2
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "adjust-alpha", "--m", "2", "--c", "1", "--d", "-3")[0] == 2
    assert run(capsys, "analyze", "--spec", str(tmp_path / "missing.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"endpoints": [], "alpha": 2}))
    code, _, err = run(capsys, "analyze", "--spec", str(bad))
    assert code == 2
    assert "/margins" in err and "/alpha" in err
    code, _, err = run(capsys, "adjust-alpha", "--m", "2", "--c", "1", "--d", "50", "--zeta", "1e-13",
                       "--max-iters", "2")
    assert code == 3
    assert "bracket" in err


def test_validate_spec_reports_everything():
    doc = load_data("example1.json")
    doc.pop("margins")
    with pytest.raises(SpecValidationError) as info:
        validate_spec(doc)
    assert [e.pointer for e in info.value.errors] == ["/margins"]
    doc = load_data("example1.json")
    doc["margins"]["eta"][0] = -1
    doc["alpha"] = 5
    with pytest.raises(SpecValidationError) as info:
        validate_spec(doc)
    msgs = {e.pointer: e.message for e in info.value.errors}
    assert "eta_k >= 0" in msgs["/margins/eta/0"]
    assert "/alpha" in msgs


def test_validate_spec_injects_defaults():
    doc = load_data("example1.json")
    doc.pop("modes")
    doc.pop("p")
    spec = validate_spec(doc)
    assert spec["p"] == 1
    assert spec["solver"]["zeta"] == 1e-5
    assert spec["modes"]["df_mode"] == "per_endpoint"
    assert spec["modes"]["se_mode"] == "unpooled"
    assert validate_spec(load_data("example2.json"))["modes"]["se_mode"] == "pooled"
