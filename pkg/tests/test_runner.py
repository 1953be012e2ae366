import json
from pathlib import Path

import pytest

from soar.archive import read_archive
from soar.errors import ConfigError
from soar.mocks import make_fixture_tasks
from soar.runner import config_from_dict, load_config, run_iteration
from soar.tasks import observe_truth_reads, serialize_task


def write_tasks(path: Path, count=4, with_truth=True):
    path.mkdir(parents=True, exist_ok=True)
    for task in make_fixture_tasks(count, with_truth=with_truth):
        (path / f"{task.task_id}.json").write_text(json.dumps(serialize_task(task)))
    return path


def base_config(tmp_path: Path, out="out", **overrides) -> dict:
    raw = {
        "tasks": str(tmp_path / "tasks"),
        "mode": "train",
        "seed": 17,
        "output_dir": str(tmp_path / out),
        "budget": {
            "sample_budget": 30,
            "refine_budget": 24,
            "batch_size": 10,
            "early_stop_perfect": 100,
        },
        "rex": {"islands": 2, "n_completions_per_pull": 4},
        "sampling_policy": {"strategy": "greedy-diverse", "k_per_task": 8},
        "refinement_policy": {"strategy": "diverse", "k_per_task": 8},
        "clock": "fixed",
        "cross_task_parallelism": 2,
        "dedup": {"enabled": False},
    }
    raw.update(overrides)
    return raw


def test_manifest_counters_match_archive(tmp_path):
    write_tasks(tmp_path / "tasks")
    config = config_from_dict(base_config(tmp_path))
    manifest = run_iteration(config)
    records = read_archive(tmp_path / "out" / "archive.jsonl")
    per_task = {}
    for record in records:
        entry = per_task.setdefault(record.task_id, {"sample": 0, "refine": 0})
        entry[record.phase] += 1
    for task_id, entry in manifest["tasks"].items():
        assert entry["sample_attempts"] == per_task[task_id]["sample"]
        assert entry["refine_attempts"] == per_task[task_id]["refine"]
        assert entry["attempts"] == sum(per_task[task_id].values())
    assert manifest["failed_tasks"] == []
    assert (tmp_path / "out" / "dataset_sampling.jsonl").stat().st_size > 0


def test_iteration_is_byte_deterministic(tmp_path):
    write_tasks(tmp_path / "tasks")
    outputs = []
    for out in ("one", "two"):
        config = config_from_dict(base_config(tmp_path, out=out))
        run_iteration(config)
        outputs.append(tmp_path / out)
    for name in ("archive.jsonl", "dataset_sampling.jsonl", "dataset_refinement.jsonl", "report.json", "report.tsv"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name
    # manifests differ only in output paths, which live in the config hash input
    a = json.loads((outputs[0] / "manifest.json").read_text())
    b = json.loads((outputs[1] / "manifest.json").read_text())
    a.pop("config_hash"), b.pop("config_hash")
    assert a == b


def test_existing_archive_requires_resume(tmp_path):
    write_tasks(tmp_path / "tasks")
    config = config_from_dict(base_config(tmp_path))
    run_iteration(config)
    with pytest.raises(ConfigError):
        run_iteration(config)


def test_resume_completes_interrupted_run(tmp_path):
    write_tasks(tmp_path / "tasks")
    full_config = config_from_dict(base_config(tmp_path, out="full"))
    full_manifest = run_iteration(full_config)

    # simulate a crash: keep only a prefix of the archive
    partial_config = config_from_dict(base_config(tmp_path, out="partial"))
    run_iteration(partial_config)
    archive = tmp_path / "partial" / "archive.jsonl"
    lines = archive.read_text().splitlines(keepends=True)
    cut = int(len(lines) * 0.4)
    archive.write_text("".join(lines[:cut]))
    for name in ("manifest.json", "dataset_sampling.jsonl", "report.json"):
        (tmp_path / "partial" / name).unlink(missing_ok=True)

    resumed_manifest = run_iteration(partial_config, resume=True)
    for task_id, entry in full_manifest["tasks"].items():
        resumed = resumed_manifest["tasks"][task_id]
        assert resumed["attempts"] == entry["attempts"]
        assert resumed["sample_attempts"] == entry["sample_attempts"]
        assert resumed["refine_attempts"] == entry["refine_attempts"]
    records = read_archive(archive)
    assert [r.record_id for r in records] == list(range(len(records)))
    ids = [r.candidate.program.program_id for r in records if r.candidate]
    assert len(ids) == len(set(ids))


def test_resume_on_complete_run_is_noop(tmp_path):
    write_tasks(tmp_path / "tasks")
    config = config_from_dict(base_config(tmp_path))
    run_iteration(config)
    before = (tmp_path / "out" / "archive.jsonl").read_bytes()
    manifest = run_iteration(config, resume=True)
    after = (tmp_path / "out" / "archive.jsonl").read_bytes()
    assert before == after
    assert manifest["failed_tasks"] == []


def test_test_time_mode_never_reads_truth(tmp_path):
    write_tasks(tmp_path / "tasks")
    config = config_from_dict(base_config(tmp_path, mode="test-time"))
    with observe_truth_reads() as counter:
        manifest = run_iteration(config)
    assert counter.reads == 0
    assert manifest["datasets"]["refinement"] is None
    assert manifest["datasets"]["sampling"]["records"] > 0
    for entry in manifest["tasks"].values():
        assert entry["solved_vote"] is None
        assert entry["solved_oracle"] is None
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    for row in report["tasks"]:
        assert row["vote_solved"] is None


def test_invalid_configs():
    with pytest.raises(ConfigError):
        config_from_dict({"tasks": "x", "mode": "bogus"})
    with pytest.raises(ConfigError):
        config_from_dict({"tasks": "x", "clock": "sundial"})
    with pytest.raises(ConfigError):
        config_from_dict({"tasks": "x", "budget": {"sample_budget": -5}})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2, 3])


def test_load_config_roundtrip(tmp_path):
    write_tasks(tmp_path / "tasks")
    raw = base_config(tmp_path)
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(raw))
    config = load_config(config_path)
    assert config.budget.sample_budget == 30
    assert config.rex.islands == 2
    assert config.config_hash() == config_from_dict(raw).config_hash()


def test_env_overrides_endpoint(tmp_path, monkeypatch):
    monkeypatch.setenv("SOAR_CHAT_URL", "http://override.local/v1")
    monkeypatch.setenv("SOAR_CHAT_KEY", "sekret")
    raw = {"tasks": "x", "chat": {"kind": "openai", "base_url": "http://file.local/v1"}}
    from soar.runner import build_chat_backend

    backend = build_chat_backend(config_from_dict(raw))
    assert backend.base_url == "http://override.local/v1"
    assert backend.api_key == "sekret"


def test_model_registry_selects_endpoint():
    from soar.runner import build_chat_backend

    raw = {
        "tasks": "x",
        "model_tag": "tuned-iter2",
        "models": {
            "tuned-iter2": {"base_url": "http://registry.local/v1", "model": "tuned-iter2"}
        },
    }
    backend = build_chat_backend(config_from_dict(raw))
    assert backend.base_url == "http://registry.local/v1"
    assert backend.model == "tuned-iter2"
