import csv
import json

import pytest

from fineassembly.cli import main


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_task_single_run(tmp_path):
    out = tmp_path / "t"
    assert main(["task", "--out", str(out)]) == 0
    for name in ("report.json", "timeline.csv", "primitives.jsonl", "stats.json"):
        assert (out / name).exists()
    m = _manifest(out)
    assert m["command"] == "task" and m["seed"] == 0 and "report.json" in m["outputs"]
    rows = list(csv.DictReader(open(out / "timeline.csv")))
    assert [int(r["primitive"]) for r in rows if r["arm"] == "right"] == [2, 9, 11]


def test_task_failure_exit_code(tmp_path):
    out = tmp_path / "t"
    assert main(["task", "--no-exploration", "--offset-mm", "1.0", "--out", str(out)]) == 1
    rep = json.loads((out / "report.json").read_text())
    assert rep["outcome"] == "failure" and rep["stage"] == "insertion"


def test_task_monte_carlo_outputs(tmp_path):
    out = tmp_path / "mc"
    assert main(["task", "--runs", "3", "--noise-mm", "1", "--seed", "2", "--out", str(out)]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["n_runs"] == 3 and stats["seed"] == 2
    assert len(list((out / "timelines").glob("run_*.csv"))) == 3


def test_task_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["task", "--noise-mm", "2", "--seed", "9", "--out", str(a)])
    main(["task", "--noise-mm", "2", "--seed", "9", "--out", str(b)])
    assert (a / "report.json").read_text() == (b / "report.json").read_text()


@pytest.mark.parametrize("argv", [
    ["workspace", "--d-min", "1.5", "--d-max", "1.0"],
    ["excite", "--harmonics", "0"],
    ["task", "--runs", "0"],
    ["task", "--noise-mm", "-1"],
    ["plan", "--start", "0,0", "--goal", "0,0,0,0,0,0"],
    ["nonsense"],
])
def test_usage_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path / "x")] if argv[0] != "nonsense" else argv) == 2


def test_bad_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1, "pin": {"diameter": 8}}')
    assert main(["task", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "pin.diameter" in capsys.readouterr().err


def test_excite_and_identify(tmp_path):
    e = tmp_path / "e"
    assert main(["excite", "--budget", "60", "--harmonics", "2", "--out", str(e)]) == 0
    p = json.loads((e / "excitation.json").read_text())
    assert p["harmonics"] == 2 and len(p["joints"][0]) == 5
    i = tmp_path / "i"
    assert main(["identify", "--params", str(e / "excitation.json"), "--out", str(i)]) == 0
    rep = json.loads((i / "report.json").read_text())
    assert rep["relative_error"] < 1e-8 and rep["fit"]["rank"] == 16
    # the written samples can be fitted again from disk
    j = tmp_path / "j"
    assert main(["identify", "--samples", str(i / "samples.csv"), "--out", str(j)]) == 0


def test_identify_static_samples_exit_1(tmp_path, capsys):
    from fineassembly.identification import SAMPLE_COLUMNS

    p = tmp_path / "s.csv"
    row = ",".join(["0.0"] * 19 + ["0", "0", "-9.8", "0", "0", "0"])
    p.write_text(",".join(SAMPLE_COLUMNS) + "\n" + "\n".join([row] * 10) + "\n")
    assert main(["identify", "--samples", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "rank deficient" in capsys.readouterr().err


def test_plan(tmp_path):
    out = tmp_path / "p"
    assert main(["plan", "--start", "0,0.05,0.3,0,1.2,0", "--goal", "1.2,0.05,0.3,0,1.2,0", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "path.csv")))
    assert rows[0][0] == "index" and len(rows) > 2
    assert main(["plan", "--start", "0,1.8,0.3,0,1.2,0", "--goal", "1.2,0.05,0.3,0,1.2,0",
                 "--out", str(out)]) == 1


def test_workspace_coarse(tmp_path):
    out = tmp_path / "w"
    assert main(["workspace", "--resolution", "0.1", "--d-min", "0.8", "--d-max", "1.2", "--step", "0.1",
                 "--out", str(out)]) == 0
    m = _manifest(out)
    assert 0.8 <= m["result"]["d_best"] <= 1.2
    assert (out / "scan.csv").exists() and (out / "voxels_single.csv").exists()
