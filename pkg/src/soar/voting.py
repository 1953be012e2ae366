"""Weighted majority voting over candidate pools and oracle scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyPool, MissingTruth
from .grids import Grid, grid_equal
from .programs import Candidate
from .tasks import Task

COUNT_MEAN_MODE = "count_plus_mean_accuracy"  # weight = count + c * mean train accuracy
SUM_MODE = "sum_of_accuracies"  # weight = sum of member train accuracies


@dataclass(frozen=True)
class VoteConfig:
    c: float = 1000.0
    n_output: int = 2
    mode: str = COUNT_MEAN_MODE

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if self.n_output < 1:
            raise ValueError("n_output must be >= 1")
        if self.mode not in (COUNT_MEAN_MODE, SUM_MODE):
            raise ValueError(f"unknown vote mode {self.mode!r}")


@dataclass(frozen=True)
class VotePattern:
    """Candidates sharing one complete set of test-output grids."""

    pattern_key: str
    grids: tuple[Grid, ...]
    members: tuple[str, ...]  # program ids, sorted
    count: int
    group_train_accuracy: float
    weight: float


def pattern_key_for(grids: Sequence[Grid]) -> str:
    """Canonical, bit-stable serialization of a complete test-output set."""
    return json.dumps([g.to_lists() for g in grids], separators=(",", ":"))


def weighted_majority_vote(
    candidates: Sequence[Candidate], config: VoteConfig = VoteConfig()
) -> list[VotePattern]:
    """Group error-free candidates by identical test outputs and rank groups.

    Candidates whose test outcomes contain any error or timeout produce no
    complete pattern and are excluded before grouping. Ranking is by weight,
    then count, then lexicographic pattern key, descending on the first two.
    """
    groups: dict[str, list[Candidate]] = {}
    grids_by_key: dict[str, tuple[Grid, ...]] = {}
    for candidate in candidates:
        evaluation = candidate.evaluation
        if not evaluation.test_all_ok or not evaluation.test_outcomes:
            continue
        grids = tuple(o.grid for o in evaluation.test_outcomes)
        key = pattern_key_for(grids)
        groups.setdefault(key, []).append(candidate)
        grids_by_key[key] = grids
    if not groups:
        raise EmptyPool("no candidates with complete error-free test outputs")

    patterns = []
    for key, members in groups.items():
        accuracies = [m.evaluation.train_accuracy for m in members]
        mean_accuracy = sum(accuracies) / len(accuracies)
        if config.mode == COUNT_MEAN_MODE:
            weight = len(members) + config.c * mean_accuracy
        else:
            weight = sum(accuracies)
        patterns.append(
            VotePattern(
                pattern_key=key,
                grids=grids_by_key[key],
                members=tuple(sorted(m.program_id for m in members)),
                count=len(members),
                group_train_accuracy=mean_accuracy,
                weight=weight,
            )
        )
    patterns.sort(key=lambda p: (-p.weight, -p.count, p.pattern_key))
    return patterns


def score_task(
    ranked: Sequence[VotePattern], truth: Sequence[Grid] | None, n_output: int = 2
) -> bool:
    """Solved iff one of the top ``n_output`` patterns matches every test output."""
    if truth is None:
        raise MissingTruth("score_task needs ground-truth test outputs")
    for pattern in ranked[:n_output]:
        if len(pattern.grids) == len(truth) and all(
            grid_equal(a, b) for a, b in zip(pattern.grids, truth)
        ):
            return True
    return False


def oracle_score(candidates: Sequence[Candidate], truth: Sequence[Grid] | None) -> bool:
    """Solved iff any single candidate reproduces every test output."""
    if truth is None:
        raise MissingTruth("oracle_score needs ground-truth test outputs")
    for candidate in candidates:
        outcomes = candidate.evaluation.test_outcomes
        if len(outcomes) != len(truth):
            continue
        if all(
            o.is_ok and o.grid is not None and grid_equal(o.grid, t)
            for o, t in zip(outcomes, truth)
        ):
            return True
    return False


def pool_vote(
    pools: Sequence[Sequence[Candidate]], config: VoteConfig = VoteConfig()
) -> list[VotePattern]:
    """Concatenate per-model pools, then vote over the union."""
    merged: list[Candidate] = []
    for pool in pools:
        merged.extend(pool)
    if not merged:
        raise EmptyPool("no candidates in any pool")
    return weighted_majority_vote(merged, config)


def task_truth(task: Task) -> tuple[Grid, ...] | None:
    """Ground-truth accessor used by vote/oracle callers (observed read)."""
    return task.test_outputs
