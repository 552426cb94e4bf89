import copy
import csv
import json
import subprocess
import sys

import pytest

from tube_rmpc.cli import main


def _cfg(example_config, tmp_path, **over):
    d = copy.deepcopy(example_config)
    d["roa"]["resolution"] = [20, 20]
    for k, v in over.items():
        d.setdefault(k, {}).update(v) if isinstance(v, dict) else d.__setitem__(k, v)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_validate_stage_only(example_config, tmp_path):
    out = tmp_path / "o"
    assert main(["pipeline", str(_cfg(example_config, tmp_path)), "--stage", "validate", "--out", str(out)]) == 0
    rep = _report(out)
    assert set(rep["validation"]["checks"]) == {"A1", "A2", "A3", "A4"}
    assert "containers" not in rep


def test_container_artifacts(example_config, tmp_path):
    out = tmp_path / "o"
    assert main(["container-opt", str(_cfg(example_config, tmp_path)), "--out", str(out)]) == 0
    cont = json.loads((out / "containers.json").read_text())
    assert set(cont) == {"Z_m0", "Z_m1", "Z_m2"}
    with open(out / "Z_m0_vertices.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["z1", "z2", "z3"] and len(rows) == 7
    assert (out / "PDZ_m2_vertices.csv").exists()


def test_terminal_and_prepare(example_config, tmp_path):
    cfg = _cfg(example_config, tmp_path)
    out = tmp_path / "o"
    assert main(["terminal", str(cfg), "--out", str(out)]) == 0
    t = json.loads((out / "terminal.json").read_text())
    assert t["container"] == "Z_m2" and t["gamma_inf"] > 0
    assert main(["prepare", str(cfg), "--out", str(out)]) == 0
    ctl = json.loads((out / "controller.json").read_text())
    assert ctl["n_vars"] == 20 and len(ctl["powers"]) == 10


def test_gamma_outside_interval_exit_3(example_config, tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(example_config, tmp_path, terminal={"gamma0": 500.0})
    assert main(["terminal", str(cfg), "--out", str(out)]) == 3
    err = _report(out)["error"]
    assert err["stage"] == "terminal" and err["constraint"] == "NoAdmissibleGamma"


def test_assumption_violation_exit_2(example_config, tmp_path):
    d = copy.deepcopy(example_config)
    d["system"]["K"] = [[0.0, 3.0]]
    out = tmp_path / "o"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert main(["validate", str(p), "--out", str(out)]) == 2
    assert _report(out)["error"]["constraint"] == "A4"


def test_infeasible_start_exit_4(example_config, tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(example_config, tmp_path, sim={"x0": [100.0, 100.0]})
    assert main(["simulate", str(cfg), "--out", str(out)]) == 4
    assert _report(out)["error"]["stage"] == "simulate"


def test_invalid_config_exit_1(example_config, tmp_path):
    cfg = _cfg(example_config, tmp_path, controller={"N": 0})
    assert main(["validate", str(cfg), "--out", str(tmp_path / "o")]) == 1
    cfg = _cfg(example_config, tmp_path, roa={"resolution": [5, 5]})
    assert main(["validate", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_system_from_separate_file(example_config, tmp_path):
    d = copy.deepcopy(example_config)
    (tmp_path / "sys.json").write_text(json.dumps(d["system"]))
    d["system"] = "sys.json"
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    assert main(["validate", str(p), "--out", str(tmp_path / "o")]) == 0
    d["system"] = "missing.json"
    p.write_text(json.dumps(d))
    assert main(["validate", str(p), "--out", str(tmp_path / "o")]) == 1


def test_reruns_are_byte_identical(example_config, tmp_path):
    cfg = _cfg(example_config, tmp_path)
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert main(["pipeline", str(cfg), "--out", str(out), "--seed", "4"]) == 0
        outs.append(out)
    for name in ("trace.csv", "roa_Z_m0.csv", "roa_Z_m2.csv", "Z_m1_vertices.csv", "terminal_trace.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    with open(outs[0] / "trace.csv") as f:
        header = next(csv.reader(f))
    assert header == ["t", "x1", "x2", "u", "J", *[f"lambda{i}" for i in range(10)], "feasible"]
    rep = _report(outs[0])
    for q in rep["qp"].values():
        c = q["lcon"]
        assert q["n_rows"] == q["N"] * (c["Z_m"] + c["Z"]) + c["S_inf"] + q["N"]
    assert rep["roa"]["reference_area_homothetic_tube"] == pytest.approx(3554.6)
    for k in (1, 2, 3):
        assert (outs[0] / f"tube_{k}.json").exists()


def test_seed_changes_trace(example_config, tmp_path):
    cfg = _cfg(example_config, tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", str(cfg), "--out", str(a), "--seed", "1"])
    main(["simulate", str(cfg), "--out", str(b), "--seed", "2"])
    assert (a / "trace.csv").read_bytes() != (b / "trace.csv").read_bytes()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "tube_rmpc.cli", "pipeline", "--stage", "validate",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
