import json
import math
import subprocess
import sys

import pytest

from livesys.cli import main, threads
from livesys.errors import ScenarioError
from livesys.scenario import builtin_names, load, parse
from scenario_factory import random_linear_scenario, write


def small_doc(**over):
    doc = {
        "meta": {"name": "tiny", "horizon": 2.0, "step": 0.01},
        "omas": {"kind": "linear", "default_agent": {"A": [[-1.0]]}, "initial": {"1": [1.0]}},
        "schedule": {"kind": "explicit", "times": [1.0], "arrivals": {"1": [2]}},
        "signals": {"arrivals": {"2": {"t": 1.0, "value": [3.0]}}},
    }
    doc.update(over)
    return doc


def test_builtins_parse():
    names = builtin_names()
    assert {"cascade-admissible", "cascade-divergent", "cascade-ciucs", "omas-join-leave"} <= set(names)
    for n in names:
        assert load(n).name == n


def test_schema_rejects_unknown_keys_and_reports_paths():
    doc = small_doc()
    doc["meta"]["colour"] = "blue"
    with pytest.raises(ScenarioError, match="meta"):
        parse(json.dumps(doc))
    with pytest.raises(ScenarioError, match="line 1 column"):
        parse("{\"meta\": ")
    bad = small_doc(schedule={"kind": "explicit"})
    with pytest.raises(ScenarioError, match="times"):
        parse(json.dumps(bad))


def test_simulate_writes_deterministic_csv(tmp_path, capsys):
    path = write(small_doc(), tmp_path / "s.json")
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", path, "--csv", str(out1)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "completed" and summary["impulses"] == 1
    assert main(["simulate", path, "--csv", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0] == "t,config_id,dim,pseudonorm"
    assert any(ln.startswith("1.0,{1 2},2,") for ln in lines)


def test_simulate_blowup_exit_code(tmp_path, capsys):
    doc = small_doc(schedule={"kind": "explicit", "times": []}, signals={})
    doc["omas"]["default_agent"]["A"] = [[3.0]]
    path = write(doc, tmp_path / "s.json")
    assert main(["simulate", path, "--csv", "-", "--escape", "10"]) == 2
    err = capsys.readouterr().err
    t_esc = json.loads(err)["t_esc"]
    # x = e^{3t} crosses 10 at ln(10) / 3
    assert t_esc == pytest.approx(math.log(10.0) / 3.0, abs=0.02)


def test_inadmissible_schedule_is_an_error(tmp_path, capsys):
    doc = small_doc(schedule={"kind": "explicit", "times": [1.0], "departures": {"1": [5]}})
    path = write(doc, tmp_path / "s.json")
    assert main(["simulate", path, "--csv", "-"]) == 1
    assert "impulse 1" in capsys.readouterr().err


def test_check_exit_codes_and_report(tmp_path):
    path = write(random_linear_scenario(3), tmp_path / "s.json")
    rep = tmp_path / "r.json"
    assert main(["check", path, "--check", "axioms", "--report", str(rep)]) == 0
    data = json.loads(rep.read_text())
    assert data["passed"] and data["check"] == "axioms" and len(data["scenario_sha256"]) == 64
    assert main(["check", "cascade-divergent", "--check", "gadt", "--report", str(rep)]) == 3
    witness = json.loads(rep.read_text())["results"][0]["witnesses"]
    assert witness and witness[0]["N"] > 0
    assert main(["check", "no-such-file.json", "--check", "gadt"]) == 1
    assert main(["check", path, "--check", "nonsense"]) == 1


def test_list_and_threads(monkeypatch, capsys):
    assert main(["list"]) == 0
    assert "cascade-admissible" in capsys.readouterr().out.split()
    monkeypatch.setenv("LIVESYS_THREADS", "3")
    assert threads() == 3
    monkeypatch.setenv("LIVESYS_THREADS", "junk")
    assert threads() == 1


def test_report_is_independent_of_thread_count(tmp_path, monkeypatch):
    reports = []
    for n in ("1", "4"):
        monkeypatch.setenv("LIVESYS_THREADS", n)
        out = tmp_path / f"r{n}.json"
        assert main(["check", "omas-join-leave", "--check", "iss", "--report", str(out)]) == 0
        reports.append(out.read_text())
    assert reports[0] == reports[1]


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "livesys.cli", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "omas-join-leave" in res.stdout
