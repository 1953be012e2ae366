"""Archive reports: per-task and aggregate accuracy, diversity, budget use.

A report is a pure function of the archive records plus the task set, so
byte-identical archives always yield byte-identical reports. Truth-dependent
columns (vote/oracle solved) are emitted as null when ground truth is absent.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .archive import ArchiveRecord
from .embeddings import EmbeddingBackend
from .errors import EmptyPool, TooFewSolutions
from .programs import Candidate
from .seeding import derive_seed
from .selection import diversity, filter_hybrid
from .tasks import Task
from .voting import VoteConfig, oracle_score, score_task, weighted_majority_vote

DIVERSITY_SAMPLE_CAP = 64


def split_candidates(records: Sequence[ArchiveRecord]) -> dict[str, dict[str, list[Candidate]]]:
    """Per-task candidates grouped by phase, in archive order."""
    by_task: dict[str, dict[str, list[Candidate]]] = {}
    for record in records:
        slot = by_task.setdefault(record.task_id, {"sample": [], "refine": []})
        if record.candidate is not None:
            slot[record.phase].append(record.candidate)
    return by_task


def votable(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Voting pool: hybrid (output-hardcoding) programs are excluded."""
    return [c for c in candidates if filter_hybrid(c.program, c.evaluation)]


def _vote_solved(candidates: list[Candidate], task: Task, config: VoteConfig) -> bool | None:
    if not task.has_truth:
        return None
    try:
        ranked = weighted_majority_vote(votable(candidates), config)
    except EmptyPool:
        return False
    return score_task(ranked, task.test_outputs, config.n_output)


def _task_diversity(
    candidates: list[Candidate], embedder: EmbeddingBackend | None, cap: int, seed: int, task_id: str
) -> float | None:
    if embedder is None:
        return None
    sources = [c.program.source_text for c in candidates]
    if len(sources) > cap:
        rng = np.random.default_rng(derive_seed(seed, "report-diversity", task_id))
        indices = sorted(int(i) for i in rng.choice(len(sources), size=cap, replace=False))
        sources = [sources[i] for i in indices]
    try:
        return diversity(sources, embedder)
    except TooFewSolutions:
        return None


def build_report(
    records: Sequence[ArchiveRecord],
    tasks: Sequence[Task],
    vote_config: VoteConfig = VoteConfig(),
    embedder: EmbeddingBackend | None = None,
    diversity_cap: int = DIVERSITY_SAMPLE_CAP,
    seed: int = 0,
    use_truth: bool = True,
) -> dict:
    """Per-task rows plus aggregates, ready for tabulation or plotting.

    With ``use_truth=False`` (test-time mode) the truth-dependent columns are
    emitted as null without ever touching ground truth.
    """
    records = list(records)
    tasks_by_id = {t.task_id: t for t in tasks}
    by_task = split_candidates(records)

    rows = []
    for task_id in sorted(by_task):
        slot = by_task[task_id]
        task = tasks_by_id.get(task_id)
        sample_candidates = slot["sample"]
        all_candidates = slot["sample"] + slot["refine"]
        task_records = [r for r in records if r.task_id == task_id]
        row: dict = {
            "task_id": task_id,
            "attempts": len(task_records),
            "sample_attempts": sum(1 for r in task_records if r.phase == "sample"),
            "refine_attempts": sum(1 for r in task_records if r.phase == "refine"),
            "parse_failures": sum(1 for r in task_records if r.parse_failure),
            "perfect_count": sum(
                1 for c in all_candidates if c.evaluation.train_perfect
            ),
        }
        if task is None or not use_truth:
            row.update(
                {"sample_vote_solved": None, "vote_solved": None, "oracle_solved": None}
            )
        else:
            row["sample_vote_solved"] = _vote_solved(sample_candidates, task, vote_config)
            row["vote_solved"] = _vote_solved(all_candidates, task, vote_config)
            if task.has_truth:
                row["oracle_solved"] = oracle_score(all_candidates, task.test_outputs)
            else:
                row["oracle_solved"] = None
        row["diversity"] = _task_diversity(all_candidates, embedder, diversity_cap, seed, task_id)
        rows.append(row)

    def rate(key: str) -> float | None:
        values = [r[key] for r in rows if r[key] is not None]
        if not values:
            return None
        return sum(1 for v in values if v) / len(values)

    solved_div = [r["diversity"] for r in rows if r["vote_solved"] and r["diversity"] is not None]
    unsolved_div = [
        r["diversity"]
        for r in rows
        if r["vote_solved"] is False and r["diversity"] is not None
    ]
    aggregates = {
        "tasks": len(rows),
        "total_attempts": len(records),
        "sample_vote_rate": rate("sample_vote_solved"),
        "vote_rate": rate("vote_solved"),
        "oracle_rate": rate("oracle_solved"),
        "mean_diversity_solved": (sum(solved_div) / len(solved_div)) if solved_div else None,
        "mean_diversity_unsolved": (sum(unsolved_div) / len(unsolved_div)) if unsolved_div else None,
    }
    return {"tasks": rows, "aggregates": aggregates}


def render_report_text(report: dict) -> str:
    """Plot-ready tabular rendering (TSV body with a header line)."""
    columns = [
        "task_id",
        "attempts",
        "sample_attempts",
        "refine_attempts",
        "parse_failures",
        "perfect_count",
        "sample_vote_solved",
        "vote_solved",
        "oracle_solved",
        "diversity",
    ]

    def cell(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, bool):
            return "1" if value else "0"
        if isinstance(value, float):
            return f"{value:.6f}"
        return str(value)

    lines = ["\t".join(columns)]
    for row in report["tasks"]:
        lines.append("\t".join(cell(row[c]) for c in columns))
    lines.append("")
    for key, value in report["aggregates"].items():
        lines.append(f"# {key}\t{cell(value)}")
    return "\n".join(lines) + "\n"


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"
