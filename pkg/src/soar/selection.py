"""Turning search archives into fine-tuning data.

Hindsight relabeling converts any fully-executed program into a correct
(synthetic task, solution) pair by declaring its actual outputs to be the
targets. Selection strategies then cap the per-task example count, dedup
collapses near-identical solutions, and the hybrid filter drops programs
that smuggle output literals into their source.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingBackend
from .errors import EmptyPool, EmptySlice, MissingTruth, TooFewSolutions
from .grids import render_grid
from .programs import Candidate, CandidateEvaluation, Program, matches_truth
from .seeding import derive_seed
from .tasks import Task
from .voting import VoteConfig, weighted_majority_vote

SAMPLING_STRATEGIES = ("correct-only", "uniform", "greedy", "greedy-diverse")
REFINEMENT_STRATEGIES = ("uniform", "diverse")

BIN_ZERO = "zero"
BIN_LOW = "low"  # (0, 1/3]
BIN_MID = "mid"  # (1/3, 1)
BIN_PERFECT_WRONG = "perfect-train-wrong-test"
PARENT_BINS = (BIN_ZERO, BIN_LOW, BIN_MID, BIN_PERFECT_WRONG)


@dataclass(frozen=True)
class SelectionPolicy:
    strategy: str
    k_per_task: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.k_per_task < 1:
            raise ValueError("k_per_task must be positive")


@dataclass(frozen=True)
class RelabeledExample:
    """A synthetic task whose outputs are exactly what the solution produces."""

    synthetic_task: Task
    solution: Program
    source_task_id: str
    kind: str = "sampling"


@dataclass(frozen=True)
class Rejected:
    reason: str


@dataclass(frozen=True)
class RefinementExample:
    """A successful parent-to-child repair, binned by parent train accuracy."""

    task: Task
    parent: Candidate
    child: Program
    child_correct: bool
    parent_bin: str

    @property
    def task_id(self) -> str:
        return self.task.task_id


def relabel(program: Program, task: Task, evaluation: CandidateEvaluation) -> RelabeledExample | Rejected:
    """Build the hindsight example, or reject when any execution is incomplete."""
    if len(evaluation.train_outcomes) != len(task.train_pairs):
        return Rejected("outcome count does not match task")
    if not evaluation.all_ok:
        return Rejected("IncompleteExecution")
    synthetic = Task(
        task_id=task.task_id,
        train_pairs=tuple(
            (x, outcome.grid)
            for (x, _), outcome in zip(task.train_pairs, evaluation.train_outcomes)
        ),
        test_inputs=task.test_inputs,
        test_outputs=tuple(o.grid for o in evaluation.test_outcomes),
        synthetic=True,
    )
    return RelabeledExample(
        synthetic_task=synthetic,
        solution=program,
        source_task_id=task.task_id,
    )


def _relabel_all(candidates: Sequence[Candidate], task: Task) -> list[RelabeledExample]:
    examples = []
    for candidate in candidates:
        example = relabel(candidate.program, task, candidate.evaluation)
        if isinstance(example, RelabeledExample):
            examples.append(example)
    return examples


def _greedy_key(candidate: Candidate, test_accuracy: float):
    return (
        -candidate.evaluation.train_accuracy,
        -test_accuracy,
        len(candidate.program.source_text),
        candidate.program_id,
    )


def _uniform_take(pool: list, k: int, rng: np.random.Generator) -> list:
    if len(pool) <= k:
        return list(pool)
    indices = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in indices]


def select_sampling_data(
    candidates: Sequence[Candidate], task: Task, policy: SelectionPolicy
) -> list[RelabeledExample]:
    """Pick at most ``k_per_task`` candidates and relabel them.

    Strategies: ``correct-only`` keeps only fully correct solutions;
    ``uniform`` draws from every fully-executed candidate; ``greedy`` ranks
    by train accuracy, then ground-truth test accuracy, then shorter source;
    ``greedy-diverse`` splits the cap between the greedy top half and the
    lowest-train-accuracy half. Caps never pad: small pools are returned
    whole.
    """
    if policy.strategy not in SAMPLING_STRATEGIES:
        raise ValueError(f"unknown sampling strategy {policy.strategy!r}")
    eligible = [c for c in candidates if c.evaluation.all_ok]
    if not eligible:
        raise EmptySlice(f"task {task.task_id}: no fully-executed candidates")
    rng = np.random.default_rng(derive_seed(policy.seed, task.task_id, policy.strategy))
    k = policy.k_per_task

    if policy.strategy in ("correct-only", "greedy", "greedy-diverse") and not task.has_truth:
        raise MissingTruth(f"strategy {policy.strategy} needs ground-truth test outputs")

    if policy.strategy == "correct-only":
        correct = [
            c
            for c in eligible
            if c.evaluation.train_perfect and matches_truth(task, c.evaluation.test_outcomes)
        ]
        if not correct:
            raise EmptySlice(f"task {task.task_id}: no fully correct solutions")
        return _relabel_all(_uniform_take(correct, k, rng), task)

    if policy.strategy == "uniform":
        return _relabel_all(_uniform_take(eligible, k, rng), task)

    test_acc = {
        c.program_id: (
            sum(
                1
                for o, t in zip(c.evaluation.test_outcomes, task.test_outputs)
                if o.is_ok and o.grid is not None and o.grid.cells == t.cells
            )
            / len(task.test_inputs)
        )
        for c in eligible
    }
    ranked = sorted(eligible, key=lambda c: _greedy_key(c, test_acc[c.program_id]))

    if policy.strategy == "greedy":
        return _relabel_all(ranked[:k], task)

    # greedy-diverse
    if len(ranked) <= k:
        return _relabel_all(ranked, task)
    top_n = (k + 1) // 2
    bottom_n = k // 2
    top = ranked[:top_n]
    top_sources = {c.program.source_text for c in top}
    remainder = [c for c in ranked[top_n:] if c.program.source_text not in top_sources]
    bottom = sorted(
        remainder, key=lambda c: (c.evaluation.train_accuracy, c.program_id)
    )[:bottom_n]
    return _relabel_all(top + bottom, task)


def parent_accuracy_bin(parent: Candidate, parent_matches_truth: bool) -> str | None:
    """Bin for a refinement parent; ``None`` when the parent was already correct."""
    accuracy = parent.evaluation.train_accuracy
    if accuracy == 0.0:
        return BIN_ZERO
    if accuracy <= 1.0 / 3.0:
        return BIN_LOW
    if accuracy < 1.0:
        return BIN_MID
    return None if parent_matches_truth else BIN_PERFECT_WRONG


def build_refinement_examples(
    task: Task, candidates_by_id: dict[str, Candidate], refined: Sequence[Candidate]
) -> list[RefinementExample]:
    """Successful refinements: incorrect parent, fully correct child.

    Needs ground truth to decide correctness, so this runs in train mode only.
    """
    if not task.has_truth:
        raise MissingTruth(f"task {task.task_id}: refinement data needs ground truth")
    examples = []
    for child in refined:
        parent_id = child.program.provenance.parent_id
        if parent_id is None:
            continue
        parent = candidates_by_id.get(parent_id)
        if parent is None:
            continue
        child_correct = child.evaluation.train_perfect and matches_truth(
            task, child.evaluation.test_outcomes
        )
        if not child_correct:
            continue
        parent_correct = parent.evaluation.train_perfect and matches_truth(
            task, parent.evaluation.test_outcomes
        )
        bin_name = parent_accuracy_bin(parent, parent_correct)
        if bin_name is None:
            continue
        examples.append(
            RefinementExample(
                task=task,
                parent=parent,
                child=child.program,
                child_correct=True,
                parent_bin=bin_name,
            )
        )
    return examples


def select_refinement_data(
    examples: Sequence[RefinementExample], policy: SelectionPolicy
) -> list[RefinementExample]:
    """Cap successful refinements per task, optionally balancing parent bins.

    The ``diverse`` strategy aims at equal per-bin quotas; bins short on
    examples hand their surplus round-robin to bins that still have spares,
    so selected counts across non-empty balanced bins differ by at most one.
    """
    if policy.strategy not in REFINEMENT_STRATEGIES:
        raise ValueError(f"unknown refinement strategy {policy.strategy!r}")
    pool = [e for e in examples if e.child_correct]
    if not pool:
        raise EmptySlice("no successful refinements to select from")
    task_id = pool[0].task_id
    rng = np.random.default_rng(derive_seed(policy.seed, task_id, "refine", policy.strategy))
    k = policy.k_per_task

    if policy.strategy == "uniform":
        return _uniform_take(pool, k, rng)

    bins: dict[str, list[RefinementExample]] = {name: [] for name in PARENT_BINS}
    for example in pool:
        bins[example.parent_bin].append(example)
    if len(pool) <= k:
        return [e for name in PARENT_BINS for e in bins[name]]

    quotas = {name: k // len(PARENT_BINS) for name in PARENT_BINS}
    for i in range(k % len(PARENT_BINS)):
        quotas[PARENT_BINS[i]] += 1
    take = {name: min(quotas[name], len(bins[name])) for name in PARENT_BINS}
    need = k - sum(take.values())
    while need > 0:
        progressed = False
        for name in PARENT_BINS:
            if need > 0 and take[name] < len(bins[name]):
                take[name] += 1
                need -= 1
                progressed = True
        if not progressed:
            break
    selected = []
    for name in PARENT_BINS:
        selected.extend(_uniform_take(bins[name], take[name], rng))
    return selected


def example_source(example) -> str:
    """Solution source for either example kind (dedup and diversity key)."""
    if isinstance(example, RelabeledExample):
        return example.solution.source_text
    if isinstance(example, RefinementExample):
        return example.child.source_text
    raise TypeError(f"not a dataset example: {type(example)!r}")


def dedup(examples: Sequence, backend: EmbeddingBackend, threshold: float = 0.9) -> list:
    """Greedy near-duplicate removal in insertion order.

    An example is dropped when its solution embedding has cosine similarity
    at or above ``threshold`` with any already-kept solution.
    """
    examples = list(examples)
    if not examples:
        return []
    vectors = np.array([v.as_array() for v in backend.embed([example_source(e) for e in examples])])
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = vectors / norms
    kept: list[int] = []
    for i in range(len(examples)):
        if kept and float(np.max(unit[kept] @ unit[i])) >= threshold:
            continue
        kept.append(i)
    return [examples[i] for i in kept]


_WHITESPACE_RE = re.compile(r"\s+")


def _squash(text: str) -> str:
    return _WHITESPACE_RE.sub("", text)


def filter_hybrid(program: Program, evaluation: CandidateEvaluation) -> bool:
    """Keep a program unless one of its computed outputs appears in its source.

    Both the nested-list literal form and the bracketed render form are
    checked, whitespace-normalized, since hardcoded outputs show up in either
    style.
    """
    source = _squash(program.source_text)
    for outcome in evaluation.train_outcomes + evaluation.test_outcomes:
        if not outcome.is_ok or outcome.grid is None:
            continue
        literal = _squash(str(outcome.grid.to_lists()))
        rendered = _squash(render_grid(outcome.grid))
        if literal in source or rendered in source:
            return False
    return True


def ttt_select(
    candidates: Sequence[Candidate],
    n_total: int,
    c: float = 1000.0,
    seed: int = 0,
) -> list[Candidate]:
    """Weighted sampling from vote groups for test-time training.

    Groups come from weighted majority voting (no ground truth involved).
    Normalized group weights drive a multinomial split of ``n_total``; within
    a group, members are drawn with replacement proportional to
    ``c * train_accuracy`` (uniform when every score is zero). Allocations
    sum to ``n_total`` exactly.
    """
    if n_total < 1:
        raise ValueError("n_total must be positive")
    patterns = weighted_majority_vote(candidates, VoteConfig(c=c, n_output=2))
    by_id = {cand.program_id: cand for cand in candidates}
    rng = np.random.default_rng(seed)
    weights = np.array([p.weight for p in patterns], dtype=float)
    allocations = rng.multinomial(n_total, weights / weights.sum())
    picked: list[Candidate] = []
    for pattern, n_g in zip(patterns, allocations):
        if n_g == 0:
            continue
        members = [by_id[pid] for pid in pattern.members]
        scores = np.array([c * m.evaluation.train_accuracy for m in members], dtype=float)
        if scores.sum() == 0.0:
            probs = np.full(len(members), 1.0 / len(members))
        else:
            probs = scores / scores.sum()
        indices = rng.choice(len(members), size=int(n_g), replace=True, p=probs)
        picked.extend(members[int(i)] for i in indices)
    if not picked:
        raise EmptyPool("ttt_select drew nothing (empty vote groups)")
    return picked


def diversity(solution_sources: Sequence[str], backend: EmbeddingBackend) -> float:
    """Mean pairwise cosine distance between solution embeddings, in [0, 2]."""
    if len(solution_sources) < 2:
        raise TooFewSolutions("diversity needs at least two solutions")
    vectors = np.array([v.as_array() for v in backend.embed(list(solution_sources))])
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = vectors / norms
    sims = unit @ unit.T
    n = len(solution_sources)
    upper = sims[np.triu_indices(n, k=1)]
    return float(np.mean(1.0 - upper))
