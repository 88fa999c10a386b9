import csv
import json

import pytest
import yaml

from treeqpnn.cli import main, parse_lengths, run


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def data_hashes(path):
    files = json.loads((path / "manifest.json").read_text())["files"]
    return {k: v for k, v in files.items() if k != "config.yaml"}


def test_schedule_two_four_two(tmp_path):
    out = run(["schedule", "--b", "2,4,2", "--out", str(tmp_path)])
    layout = json.loads((out / "layout.json").read_text())
    assert layout["span_steps"] == 48 and layout["photons"] == 27
    rows = read_csv(out / "timetable.csv")
    emits = [int(r["timestep"]) for r in rows if r["event"] == "EMIT"]
    assert len(emits) == 27 and max(emits) == 48
    assert "span 48" in (out / "timetable.txt").read_text()


def test_schedule_three_sources_and_static(tmp_path):
    three = run(["schedule", "--b", "2,2", "--sources", "3", "--out", str(tmp_path / "a")])
    assert json.loads((three / "layout.json").read_text())["span_steps"] == 2
    static = run(["schedule", "--b", "2,2", "--delay-mode", "static", "--out", str(tmp_path / "b")])
    layout = json.loads((static / "layout.json").read_text())
    assert layout["n_lines"] == 4 and layout["output_switch_stages"] == 3 and layout["input_switch_stages"] == 2
    assert len(read_csv(static / "delay_lines.csv")) == 4


def test_budget_csv_sums(tmp_path):
    out = run(["schedule", "--b", "2,2", "--preset", "single", "--out", str(tmp_path)])
    for row in read_csv(out / "budgets.csv"):
        parts = sum(float(v) for k, v in row.items() if k.endswith("_db") and k != "total_db")
        assert parts == pytest.approx(float(row["total_db"]), abs=1e-9)


def test_config_precedence_and_echo(tmp_path, monkeypatch):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"b": "2,4,2", "delay_mode": "static", "seed": 3}))
    monkeypatch.setenv("TREEQPNN_THREADS", "1")
    out = run(["schedule", "--config", str(cfg), "--b", "2,2", "--out", str(tmp_path / "o")])
    echo = yaml.safe_load((out / "config.yaml").read_text())
    assert echo["b"] == "2,2" and echo["delay_mode"] == "static" and echo["seed"] == 3
    assert echo["threads"] == 1 and echo["command"] == "schedule"
    again = run(["schedule", "--config", str(out / "config.yaml"), "--out", str(tmp_path / "p")])
    assert data_hashes(out) == data_hashes(again)


def test_unknown_config_keys_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("b: 2,2\nbranching: 3\n")
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "branching" in capsys.readouterr().err
    cfg.write_text("hardware:\n  mzi_loss: 0.1\n")
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text("command: train\n")
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_hardware_overrides(tmp_path):
    cfg = tmp_path / "hw.yaml"
    cfg.write_text("preset: single\nhardware:\n  coupling_loss_db: 0.0\n")
    out = run(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert all(float(r["coupling_db"]) == 0 for r in read_csv(out / "budgets.csv"))


def test_invalid_inputs(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["schedule", "--preset", "best"])
    assert main(["schedule", "--b", "2,0", "--out", str(tmp_path / "o")]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["schedule", "--out", str(blocker / "sub")]) == 2
    assert main(["repeater", "--lengths", "12", "--out", str(tmp_path / "r")]) == 2
    with pytest.raises(ValueError):
        parse_lengths("10:5:1")


def test_parse_lengths():
    assert parse_lengths("50:200:50") == [50, 100, 150, 200]
    assert parse_lengths("10,20") == [10, 20]


def test_repeater_single_preset_keeps_smallest_tree(tmp_path):
    out = run(["repeater", "--preset", "single", "--lengths", "10:3000:290", "--constraint", "b2",
               "--out", str(tmp_path)])
    rows = read_csv(out / "fig5a.csv")
    assert len(rows) == 11 and {r["n"] for r in rows} == {"3"}
    rates = read_csv(out / "fig5b.csv")
    assert all(float(r["log10_communication_rate"]) < 8 for r in rates)


def test_analyze_and_fidelity_table(tmp_path):
    stats = tmp_path / "stats.json"
    stats.write_text(json.dumps({"mean": 0.999, "ci_low": 0.998, "ci_high": 0.9995}))
    out = run(["analyze", "--b", "2,2", "--depth", "3", "--preset", "single", "--fidelity-stats", str(stats),
               "--out", str(tmp_path / "o")])
    row = read_csv(out / "analysis.csv")[0]
    assert row["n"] == "7" and 1e3 / 3 < float(row["generation_rate_hz"]) < 3e3
    fig = read_csv(out / "fig4a.csv")
    assert [r["n"] for r in fig] == ["3", "7", "15"]
    assert float(fig[1]["tree_fidelity"]) == pytest.approx(0.999 ** 7, rel=1e-10)


def test_compare_tables(tmp_path):
    out = run(["compare", "--depth", "4", "--out", str(tmp_path)])
    boost = read_csv(out / "figS8.csv")
    assert [float(r["boost"]) for r in boost[1:3]] == [4, 3]
    fig = read_csv(out / "fig1e.csv")
    assert {r["protocol"] for r in fig} == {"qpnn", "emitter-qd", "emitter-SiV", "emitter-atom"}


def test_sweep_loss_reduction(tmp_path):
    out = run(["sweep", "--preset", "single", "--values", "0,0.9", "--depth", "3", "--out", str(tmp_path)])
    rows = read_csv(out / "fig4c.csv")
    assert len(rows) == 6
    base, better = rows[:3], rows[3:]
    assert all(float(b["generation_rate_hz"]) < float(g["generation_rate_hz"]) for b, g in zip(base, better))


def test_train_and_sweep_are_reproducible(tmp_path):
    args = ["train", "--trials", "2", "--epochs", "15", "--seed", "4"]
    first = run(args + ["--out", str(tmp_path / "a")])
    second = run(args + ["--out", str(tmp_path / "b")])
    assert data_hashes(first) == data_hashes(second)
    assert {"trials.csv", "trajectories.csv", "best.json", "op_fidelities.csv", "hinton.csv",
            "stats.json"} <= set(data_hashes(first))
    assert len(read_csv(first / "trajectories.csv")) == 2 * 16
    assert "error" in json.loads((first / "stats.json").read_text())
    sweep = ["sweep", "--kind", "dc-sigma", "--values", "0.005", "--trials", "1", "--epochs", "5", "--depth", "2"]
    a = run(sweep + ["--out", str(tmp_path / "c")])
    b = run(sweep + ["--out", str(tmp_path / "d")])
    assert data_hashes(a) == data_hashes(b)
    assert len(read_csv(a / "figS6.csv")) == 2
