import json
import re
import subprocess
import sys

import pytest

from ensbma import cli


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "synth.csv"
    assert cli.main(["synth", "--days", "45", "--stations", "3", "--spread", "0.5", "--seed", "4",
                     "--out", str(p)]) == 0
    return p


def test_synth_is_byte_identical(tmp_path):
    args = ["synth", "--days", "10", "--stations", "2", "--omega", "0.3", "--shift", "5:1.5", "--seed", "8"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "date,station,obs,fc," + ",".join(f"f{k:02d}" for k in range(1, 11))
    assert len(a.read_text().splitlines()) == 21


def test_run_writes_outputs(tmp_path, csv_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--data", str(csv_path), "--window", "20", "--bias", "additive", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["bma"]["n_cases"] == summary["raw"]["n_cases"] == 25 * 3
    assert {p.name for p in out.iterdir()} == {"report.json", "daily.csv", "weights.csv", "events.csv", "pit.csv", "ranks.csv"}


def test_run_report_is_deterministic(tmp_path, csv_path):
    for name in ("a", "b"):
        assert cli.main(["run", "--data", str(csv_path), "--window", "15", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_config_round_trip(tmp_path, csv_path):
    first = tmp_path / "first"
    assert cli.main(["run", "--data", str(csv_path), "--window", "18", "--scheme", "three", "--bias", "none",
                     "--level", "0.8", "--out", str(first)]) == 0
    replay = tmp_path / "replay"
    assert cli.main(["run", "--data", str(csv_path), "--config", str(first / "report.json"), "--out", str(replay)]) == 0
    assert (first / "report.json").read_bytes() == (replay / "report.json").read_bytes()
    cfg = json.loads((replay / "report.json").read_text())["config"]
    assert cfg["window_days"] == 18 and cfg["variant"] == "three" and cfg["nominal_level"] == 0.8


def test_flags_override_config(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"window_days": 12, "bias_mode": "none"}))
    args = cli.build_parser().parse_args(["run", "--data", "x", "--config", str(conf), "--window", "40"])
    cfg = cli.config_from_args(args)
    assert cfg.window_days == 40 and cfg.bias_mode.value == "none"


def test_csv_format(tmp_path, csv_path, capsys):
    assert cli.main(["run", "--data", str(csv_path), "--window", "20", "--format", "csv", "--out", str(tmp_path / "o")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("system,n_cases,mean_crps")
    assert [l.split(",")[0] for l in lines[1:]] == ["bma", "raw"]


def test_sweep(tmp_path, csv_path, capsys):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--data", str(csv_path), "--lengths", "10,15,20", "--out", str(out)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["window"] for r in rows] == [10, 15, 20]
    assert len((out / "sweep.csv").read_text().splitlines()) == 4


def test_parse_lengths():
    assert cli.parse_lengths("10:60") == list(range(10, 61))
    assert cli.parse_lengths("10:20:5") == [10, 15, 20]
    assert cli.parse_lengths("3,7") == [3, 7]


def test_rankhist(csv_path, capsys):
    assert cli.main(["rankhist", "--data", str(csv_path), "--seed", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["rank_counts"]) == 12 and sum(doc["rank_counts"]) == 45 * 3
    assert doc["seed"] == 1


def test_inspect(csv_path, capsys):
    assert cli.main(["inspect", "--data", str(csv_path), "--date", "2010-11-10", "--station", "S01", "--window", "20"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert sum(doc["distribution"]["weights"]) == pytest.approx(1.0)
    lo, hi = doc["interval"]
    assert lo < doc["median"] < hi
    assert 0 <= doc["pit"] <= 1 and doc["crps"] >= 0


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["run"],
    ["run", "--data", "x.csv", "--window", "zero"],
    ["run", "--data", "x.csv", "--window", "0"],
    ["sweep", "--data", "x.csv", "--lengths", "60:10"],
    ["synth", "--scheme", "three", "--omega", "0.3"],
    ["synth", "--shift", "oops"],
])
def test_usage_errors(argv, capsys):
    assert cli.main(argv) == cli.EXIT_USAGE


def test_data_errors(tmp_path, csv_path):
    assert cli.main(["run", "--data", str(tmp_path / "missing.csv")]) == cli.EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("date,station\n2010-01-01,A\n")
    assert cli.main(["rankhist", "--data", str(bad)]) == cli.EXIT_DATA
    # window longer than the data: no day can be fitted
    assert cli.main(["run", "--data", str(csv_path), "--start", "2010-10-02", "--end", "2010-10-03",
                     "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert cli.main(["inspect", "--data", str(csv_path), "--date", "2010-10-02", "--station", "S00"]) == cli.EXIT_DATA
    assert cli.main(["inspect", "--data", str(csv_path), "--date", "2010-11-10", "--station", "XX"]) == cli.EXIT_DATA


@pytest.mark.parametrize("command", ["run", "sweep", "synth", "rankhist", "inspect"])
def test_help_states_defaults(command, capsys):
    assert cli.main([command, "--help"]) == 0
    text = capsys.readouterr().out
    options = re.findall(r"^\s+(--[\w-]+)", text, flags=re.M)
    assert options
    body = re.split(r"\n(?=\s+--)", text.split("options:", 1)[1])
    for chunk in body:
        if chunk.strip().startswith(("--help", "-h")) or "required" in chunk or "--data" in chunk.split()[0:1]:
            continue
        if chunk.strip().startswith(("--date", "--station")):
            continue
        assert "default" in chunk, chunk


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "ensbma.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "synth" in res.stdout
