import json
import subprocess
import sys

import pytest

from artifact import __version__
from artifact.cli import (CONSTRUCTIONS, FIELDS, Scenario, main, parse_scenarios, payload,
                          run, summary_line)
from artifact.errors import UnsupportedError


def _write(tmp_path, specs):
    p = tmp_path / "s.jsonl"
    p.write_text("# scenarios\n" + "\n".join(json.dumps(s) for s in specs) + "\n")
    return p


def test_list_constructions(capsys):
    assert main(["--list-constructions"]) == 0
    out = capsys.readouterr().out
    for c in CONSTRUCTIONS:
        assert c in out


def test_run_writes_report(tmp_path, capsys):
    path = _write(tmp_path, [{"construction": "pair", "n": 2,
                              "checks": ["axioms", "algebroid_iso", "tame"]},
                             {"construction": "edge", "checks": ["axioms", "morphism"]}])
    rep = tmp_path / "r.jsonl"
    code = main(["run", str(path), "--seed", "3", "--samples", "50", "--report", str(rep)])
    assert code == 0
    lines = [json.loads(s) for s in rep.read_text().splitlines()]
    entries, summ = lines[:-1], lines[-1]
    assert len(entries) == 5 and summ["summary"] and summ["passed"]
    for e in entries:
        assert list(e) == list(FIELDS)
        assert e["seed"] == 3 and e["samples"] == 50 and e["version"] == __version__
    assert "PASS" in capsys.readouterr().out


def test_failures_give_exit_code_one(tmp_path, capsys):
    path = _write(tmp_path, [{"construction": "edge", "f": "nontame", "checks": ["axioms"]},
                             {"construction": "pair", "checks": ["ideal"]}])
    rep = tmp_path / "r.jsonl"
    assert main(["run", str(path), "--report", str(rep)]) == 1
    entries = [json.loads(s) for s in rep.read_text().splitlines()][:-1]
    assert entries[0]["check"] == "construction"
    assert entries[0]["error"]["type"] == "TamenessError" and entries[0]["witness"]
    assert entries[1]["error"]["type"] == "UnsupportedError"
    assert "FAIL" in capsys.readouterr().out


def test_tolerance_override_can_fail_a_check(tmp_path):
    path = _write(tmp_path, [{"construction": "adiabatic", "checks": ["algebroid_axioms"]}])
    rep = tmp_path / "r.jsonl"
    main(["run", str(path), "--samples", "30", "--tol", "bracket=-1", "--report", str(rep)])
    entry = json.loads(rep.read_text().splitlines()[0])
    assert not entry["passed"] and entry["tol"] == -1


def test_bad_tolerance_name(tmp_path):
    path = _write(tmp_path, [{"construction": "pair"}])
    with pytest.raises(SystemExit):
        main(["run", str(path), "--tol", "nonsense=1"])


def test_invalid_scenario_exit_code(tmp_path, capsys):
    path = _write(tmp_path, [{"construction": "klein bottle"}])
    assert main(["run", str(path)]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["run", str(bad)]) == 2


def test_scenario_defaults_and_overrides():
    sc = Scenario({"construction": "pair"}, seed=5, tol={"structural": 1e-9})
    assert (sc.n, sc.k, sc.seed, sc.samples) == (2, 1, 5, 200)
    assert sc.tol["structural"] == 1e-9 and sc.tol["bracket"] == 1e-5
    with pytest.raises(UnsupportedError):
        Scenario({"construction": "pair", "checks": ["everything"]})


@pytest.mark.parametrize("construction", ["pullback", "edge_ni", "desingularize_ni",
                                          "hyperbolic"])
def test_constructions_pass(construction):
    sc = parse_scenarios(json.dumps({"construction": construction, "n": 1, "k": 1,
                                     "checks": ["axioms", "morphism"]}), samples=60)
    entries = run(sc, threads=1)
    assert all(e["passed"] for e in entries), entries
    assert summary_line(entries)["passed"]


def test_payload_drops_timings():
    entries = run(parse_scenarios(json.dumps({"construction": "pair", "n": 1}), samples=20))
    assert all("elapsed_s" in e for e in entries)
    assert all("elapsed_s" not in e for e in payload(entries))


def test_console_module_entry(tmp_path):
    path = _write(tmp_path, [{"construction": "pair", "n": 1, "checks": ["axioms"]}])
    out = subprocess.run([sys.executable, "-m", "artifact.cli", "run", str(path)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "1/1 checks passed" in out.stdout


def test_reference_desingularization_scenario():
    sc = parse_scenarios(json.dumps({"construction": "desingularize", "n": 2, "k": 1,
                                     "checks": ["axioms", "algebroid_iso"],
                                     "samples": 200, "seed": 42}))
    entries = run(sc, threads=1)
    assert [e["check"] for e in entries] == ["axioms", "algebroid_iso"]
    assert all(e["passed"] for e in entries), entries
