import csv
import json
import logging

import pytest

from flexmap.cli import (
    EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, ScenarioConfig, UsageError, main, read_config,
)
from flexmap.network import network_to_dict

from conftest import two_bus


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_solve_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["solve", "--net", "five_bus", "--H", "8", "--T", "2", "--objective", "surveyor",
                 "--out", str(out)]) == EXIT_OK
    assert len(rows(out / "map.csv")) == 16
    assert sorted(p.name for p in out.glob("*.svg")) == ["map_t1.svg", "map_t2.svg"]
    stats = json.loads((out / "map_stats.json").read_text())
    assert stats["config"]["objective"] == "surveyor"
    assert "areas" in capsys.readouterr().out


def test_solve_single_period_logs(tmp_path, caplog):
    with caplog.at_level(logging.INFO, logger="flexmap"):
        assert main(["-v", "solve", "--T", "1", "--out", str(tmp_path)]) == EXIT_OK
    assert "no ramp rows" in caplog.text
    assert len(rows(tmp_path / "map.csv")) == 8


def test_solve_metadata(tmp_path):
    assert main(["solve", "--T", "2", "--objective", "linear", "--coupling", "same-index",
                 "--out", str(tmp_path)]) == EXIT_OK
    meta = json.loads((tmp_path / "map.json").read_text())["metadata"]
    assert meta["coupling"] == "same-index" and meta["objective"] == "linear"


def test_solve_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["solve", "--T", "2", "--no-batteries", "--overlay", "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("map.csv", "map.json", "map_t1.svg", "map_t2.svg", "map_overlay.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("argv", [
    ["solve", "--H", "2"],
    ["solve", "--T", "0"],
    ["solve", "--net", "no_such_net"],
    ["solve", "--ramp-scale", "fast"],
    ["solve", "--objective", "best"],
    ["frobnicate"],
    [],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv[:1] == ["solve"] else argv) == EXIT_USAGE


def test_infeasible_exit(tmp_path):
    # load beyond the line's thermal limit with nothing local to serve it
    path = tmp_path / "net.json"
    path.write_text(json.dumps(network_to_dict(two_bus(2.0, 0.0, imax_sq=1.0))))
    assert main(["solve", "--net", str(path), "--out", str(tmp_path / "o")]) == EXIT_INFEASIBLE


def test_compare_case_one(tmp_path):
    assert main(["compare", "--cases", "I", "--T", "2", "--out", str(tmp_path)]) == EXIT_OK
    table = rows(tmp_path / "compare.csv")
    assert list(table[0]) == ["case", "period", "objective", "area", "relative-area-%", "wall-time-s"]
    for t in ("1", "2"):
        lin, sur = (float(r["relative-area-%"]) for r in table if r["period"] == t)
        assert abs(lin - sur) <= 0.5


def test_compare_ramp_sweep_monotone(tmp_path):
    assert main(["compare", "--cases", "II", "--ramps", "5,30,50", "--objectives", "linear",
                 "--T", "2", "--out", str(tmp_path)]) == EXIT_OK
    table = rows(tmp_path / "compare.csv")
    for t in ("1", "2"):
        areas = [float(r["area"]) for r in table if r["period"] == t]
        assert len(areas) == 3 and areas[0] < areas[1] < areas[2]


def test_compare_single_variant(tmp_path):
    assert main(["compare", "--cases", "III", "--objectives", "linear", "--out", str(tmp_path)]) == EXIT_USAGE


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solved")
    assert main(["solve", "--T", "2", "--no-batteries", "--ramp-scale", "50", "--out", str(out)]) == EXIT_OK
    return out


def test_verify_valid(solved, tmp_path, capsys):
    code = main(["verify", str(solved / "map.json"), "--no-batteries", "--ramp-scale", "50",
                 "--trials", "5", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["passed"] and rep["path_attempted"] == 5
    assert "verification report" in capsys.readouterr().out


def test_verify_tampered_csv(solved, tmp_path):
    lines = (solved / "map.csv").read_text().splitlines()
    cells = lines[1].split(",")
    cells[3] = repr(float(cells[3]) + 0.5)
    lines[1] = ",".join(cells)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    code = main(["verify", str(bad), "--no-batteries", "--ramp-scale", "50", "--trials", "0",
                 "--out", str(tmp_path)])
    assert code == EXIT_VERIFY


def test_verify_no_trials(solved, tmp_path):
    code = main(["verify", str(solved / "map.json"), "--no-batteries", "--ramp-scale", "50",
                 "--trials", "0", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert json.loads((tmp_path / "verify.json").read_text())["path_attempted"] == 0


def test_verify_bad_inputs(solved, tmp_path):
    assert main(["verify", str(tmp_path / "missing.csv")]) == EXIT_USAGE
    assert main(["verify", str(solved / "map.csv"), "--T", "1", "--out", str(tmp_path)]) == EXIT_USAGE


def test_sample(tmp_path):
    for d in ("a", "b"):
        assert main(["sample", "--no-network-limits", "--n", "300", "--seed", "4",
                     "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("samples.csv", "hull.csv", "sample_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "sample_summary.json").read_text())
    assert summary["attempted"] == 300 and summary["hull_area"] > 0


def test_sample_single_point(tmp_path):
    assert main(["sample", "--n", "1", "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "sample_summary.json").read_text())["hull_area"] == 0.0
    assert main(["sample", "--n", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["sample", "--t", "9", "--out", str(tmp_path)]) == EXIT_USAGE


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# scenario\n[run]\nH = 4\nT = 2\nbatteries = no\nramp-scale = inf\n"
                   f"out = \"{tmp_path / 'fromcfg'}\"\n")
    assert read_config(str(cfg))["ramp_scale"] == "inf"
    assert main(["solve", "--config", str(cfg)]) == EXIT_OK
    assert len(rows(tmp_path / "fromcfg" / "map.csv")) == 8
    # flags win over the file
    assert main(["solve", "--config", str(cfg), "--H", "5"]) == EXIT_OK
    assert len(rows(tmp_path / "fromcfg" / "map.csv")) == 10
    cfg.write_text("H 4\n")
    assert main(["solve", "--config", str(cfg)]) == EXIT_USAGE


def test_scenario_validation():
    with pytest.raises(UsageError):
        ScenarioConfig(ramp_scale=-1.0).validate()
    with pytest.raises(UsageError):
        ScenarioConfig(coupling="pairs").validate()
    assert ScenarioConfig().validate().H == 8
