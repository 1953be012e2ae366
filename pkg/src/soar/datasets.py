"""Fine-tuning dataset export: chat-format JSONL records.

Each record holds the exact inference prompt (system + user) and the solution
as the assistant turn, so the exported file is directly consumable by common
supervised fine-tuning harnesses. Every sampling record is re-verified by
execution before it is written; a stale example aborts the export.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import VerificationFailure
from .executor import Executor
from .grids import grid_equal
from .programs import CandidateEvaluation
from .prompts import build_refinement_prompt, build_sampling_prompt, render_program_block
from .seeding import derive_seed
from .selection import RefinementExample, RelabeledExample
from .tasks import Task

SAMPLING_KIND = "sampling"
REFINEMENT_KIND = "refinement"


def _permuted_task(task: Task, permutation: Sequence[int]) -> Task:
    return Task(
        task_id=task.task_id,
        train_pairs=tuple(task.train_pairs[i] for i in permutation),
        test_inputs=task.test_inputs,
        test_outputs=task._test_outputs,
        synthetic=task.synthetic,
    )


def _verify_relabel(example: RelabeledExample, executor: Executor, timeout_ms: int):
    """Re-check the correct-by-construction guarantee before export."""
    task = example.synthetic_task
    grids = [x for x, _ in task.train_pairs] + list(task.test_inputs)
    expected = [y for _, y in task.train_pairs] + list(task.test_outputs or ())
    outcomes = executor.run(example.solution.source_text, grids, timeout_ms)
    for outcome, target in zip(outcomes, expected):
        if not (outcome.is_ok and outcome.grid is not None and grid_equal(outcome.grid, target)):
            raise VerificationFailure(
                f"solution {example.solution.program_id} no longer reproduces its outputs"
            )


def _verify_refinement(example: RefinementExample, executor: Executor, timeout_ms: int):
    task = example.task
    grids = [x for x, _ in task.train_pairs]
    expected = [y for _, y in task.train_pairs]
    outcomes = executor.run(example.child.source_text, grids, timeout_ms)
    for outcome, target in zip(outcomes, expected):
        if not (outcome.is_ok and outcome.grid is not None and grid_equal(outcome.grid, target)):
            raise VerificationFailure(
                f"refined program {example.child.program_id} no longer solves its train pairs"
            )


def _sampling_record(example: RelabeledExample, permutation: Sequence[int]) -> dict:
    task = _permuted_task(example.synthetic_task, permutation)
    messages = build_sampling_prompt(task)
    return {
        "messages": [m.to_dict() for m in messages]
        + [{"role": "assistant", "content": render_program_block(example.solution.source_text)}],
        "meta": {
            "kind": SAMPLING_KIND,
            "task_id": example.source_task_id,
            "iteration": example.solution.origin.iteration,
            "provenance": example.solution.provenance.kind,
            "program_id": example.solution.program_id,
        },
    }


def _refinement_record(example: RefinementExample, permutation: Sequence[int]) -> dict:
    task = _permuted_task(example.task, permutation)
    parent_eval = example.parent.evaluation
    permuted_eval = CandidateEvaluation(
        program_id=parent_eval.program_id,
        train_outcomes=tuple(parent_eval.train_outcomes[i] for i in permutation),
        test_outcomes=parent_eval.test_outcomes,
        train_accuracy=parent_eval.train_accuracy,
    )
    messages = build_refinement_prompt(task, example.parent.program.source_text, permuted_eval)
    return {
        "messages": [m.to_dict() for m in messages]
        + [{"role": "assistant", "content": render_program_block(example.child.source_text)}],
        "meta": {
            "kind": REFINEMENT_KIND,
            "task_id": example.task_id,
            "iteration": example.child.origin.iteration,
            "provenance": example.child.provenance.kind,
            "parent_id": example.parent.program_id,
            "parent_bin": example.parent_bin,
            "program_id": example.child.program_id,
        },
    }


def export_dataset(
    examples: Sequence[RelabeledExample | RefinementExample],
    kind: str,
    path: str | Path,
    augment_shuffle: bool = False,
    seed: int = 0,
    executor: Executor | None = None,
    timeout_ms: int = 2000,
) -> str:
    """Write one JSONL record per example; returns the file's sha256 digest.

    With ``augment_shuffle`` the train-pair order inside each record's prompt
    is permuted with a per-record seed (refinement feedback is permuted
    consistently). When an executor is supplied, examples are re-verified by
    execution first and a failure aborts the export.
    """
    if kind not in (SAMPLING_KIND, REFINEMENT_KIND):
        raise ValueError(f"unknown dataset kind {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for index, example in enumerate(examples):
        if kind == SAMPLING_KIND:
            if not isinstance(example, RelabeledExample):
                raise TypeError("sampling export expects RelabeledExample items")
            if executor is not None:
                _verify_relabel(example, executor, timeout_ms)
            n_pairs = len(example.synthetic_task.train_pairs)
        else:
            if not isinstance(example, RefinementExample):
                raise TypeError("refinement export expects RefinementExample items")
            if executor is not None:
                _verify_refinement(example, executor, timeout_ms)
            n_pairs = len(example.task.train_pairs)

        if augment_shuffle:
            rng = np.random.default_rng(derive_seed(seed, kind, index))
            permutation = list(rng.permutation(n_pairs))
        else:
            permutation = list(range(n_pairs))

        if kind == SAMPLING_KIND:
            record = _sampling_record(example, permutation)
        else:
            record = _refinement_record(example, permutation)
        lines.append(json.dumps(record, sort_keys=True))

    blob = ("\n".join(lines) + "\n") if lines else ""
    path.write_text(blob)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
