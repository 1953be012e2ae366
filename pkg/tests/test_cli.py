import json
from pathlib import Path

from soar.cli import main

from test_runner import base_config, write_tasks


def _run_iteration(tmp_path, **overrides) -> Path:
    write_tasks(tmp_path / "tasks")
    raw = base_config(tmp_path, **overrides)
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(raw))
    assert main(["iterate", "--config", str(config_path)]) == 0
    return tmp_path / "out"


def test_iterate_and_report_commands(tmp_path, capsys):
    out = _run_iteration(tmp_path)
    assert (out / "manifest.json").exists()
    capsys.readouterr()

    code = main(
        [
            "report",
            "--archive",
            str(out / "archive.jsonl"),
            "--tasks",
            str(tmp_path / "tasks"),
        ]
    )
    assert code == 0
    body = capsys.readouterr().out
    assert body.startswith("task_id\t")
    assert "fix00" in body


def test_solve_prints_top_patterns(tmp_path, capsys):
    write_tasks(tmp_path / "tasks", count=1)
    task_file = next((tmp_path / "tasks").glob("*.json"))
    code = main(
        [
            "solve",
            str(task_file),
            "--seed",
            "3",
            "--sample-budget",
            "30",
            "--refine-budget",
            "10",
        ]
    )
    assert code == 0
    output = capsys.readouterr().out
    assert "task fix00" in output
    assert "#1 weight=" in output
    assert "test output 1:" in output


def test_vote_command(tmp_path, capsys):
    out = _run_iteration(tmp_path)
    vote_path = tmp_path / "vote.json"
    code = main(
        [
            "vote",
            "--archive",
            str(out / "archive.jsonl"),
            "--tasks",
            str(tmp_path / "tasks"),
            "--score",
            "--out",
            str(vote_path),
        ]
    )
    assert code == 0
    payload = json.loads(vote_path.read_text())
    assert "fix00" in payload
    first = payload["fix00"]["patterns"][0]
    assert set(first) == {"weight", "count", "mean_train_accuracy", "outputs"}
    assert payload["fix00"]["solved"] in (True, False)


def test_build_dataset_command(tmp_path, capsys):
    out = _run_iteration(tmp_path)
    dataset = tmp_path / "ds.jsonl"
    code = main(
        [
            "build-dataset",
            "--archive",
            str(out / "archive.jsonl"),
            "--tasks",
            str(tmp_path / "tasks"),
            "--strategy",
            "greedy-diverse",
            "--k",
            "6",
            "--out",
            str(dataset),
            "--verify",
        ]
    )
    assert code == 0
    lines = dataset.read_text().splitlines()
    assert lines
    record = json.loads(lines[0])
    assert [m["role"] for m in record["messages"]] == ["system", "user", "assistant"]


def test_ttt_select_command(tmp_path):
    out = _run_iteration(tmp_path)
    dataset = tmp_path / "ttt.jsonl"
    code = main(
        [
            "ttt-select",
            "--archive",
            str(out / "archive.jsonl"),
            "--tasks",
            str(tmp_path / "tasks"),
            "-N",
            "5",
            "--out",
            str(dataset),
        ]
    )
    assert code == 0
    assert dataset.read_text().splitlines()


def test_bad_config_exits_3(tmp_path, capsys):
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"tasks": "nowhere", "mode": "bogus"}))
    assert main(["iterate", "--config", str(config_path)]) == 3


def test_corrupt_archive_exits_2(tmp_path, capsys):
    out = _run_iteration(tmp_path)
    archive = out / "archive.jsonl"
    archive.write_text(archive.read_text()[:-30])
    code = main(["report", "--archive", str(archive), "--tasks", str(tmp_path / "tasks")])
    assert code == 2
