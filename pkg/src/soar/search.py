"""Sample&Refine search: bulk sampling with early stop, then bandit refinement.

Refinement treats every error-free program as an arm of a generative bandit.
An arm's Beta draw uses shape parameters ``1 + C*h`` and ``1 + C*(1-h) + cnt``
where ``h`` is its train accuracy and ``cnt`` the completions already spent
on it, so accurate, rarely-pulled arms win more draws. Four independent
islands split the refinement budget and run interleaved round-robin so runs
are reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .chat import ChatBackend, SamplingParams
from .errors import BackendUnavailable, CompletionParseError, NoViableSeeds
from .executor import DEFAULT_TIMEOUT_MS, Executor, evaluate_program
from .programs import Candidate, Origin, Program, Provenance
from .prompts import build_refinement_prompt, build_sampling_prompt, parse_completion
from .seeding import derive_seed
from .tasks import Task

SAMPLE_PHASE = "sample"
REFINE_PHASE = "refine"


@dataclass(frozen=True)
class SearchBudget:
    sample_budget: int = 3000
    refine_budget: int = 3000
    batch_size: int = 50
    early_stop_perfect: int = 100
    # off by default: unused sampling budget stays unused
    transfer_unused_sample_budget: bool = False

    def __post_init__(self):
        if self.sample_budget < 1 or self.batch_size < 1 or self.early_stop_perfect < 1:
            raise ValueError("sample budget, batch size, and early-stop threshold must be positive")
        if self.refine_budget < 0:
            raise ValueError("refine budget must be >= 0")

    def refine_ceiling(self, sample_attempts: int) -> int:
        """Refinement attempt budget, optionally inheriting unused samples."""
        if self.transfer_unused_sample_budget:
            return self.refine_budget + max(0, self.sample_budget - sample_attempts)
        return self.refine_budget


@dataclass(frozen=True)
class RexConfig:
    c: float = 20.0
    n_completions_per_pull: int = 4
    islands: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be > 0")
        if self.n_completions_per_pull < 1 or self.islands < 1:
            raise ValueError("completions per pull and islands must be >= 1")


@dataclass
class RexArm:
    candidate: Candidate
    heuristic_value: float
    pull_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.heuristic_value <= 1.0:
            raise ValueError("heuristic value must be in [0, 1]")

    @property
    def program_id(self) -> str:
        return self.candidate.program.program_id

    @property
    def program(self) -> Program:
        return self.candidate.program


def rex_select(arms: Sequence[RexArm], config: RexConfig, rng: np.random.Generator) -> RexArm:
    """Draw one Beta sample per arm and return the argmax arm.

    Ties break toward the lowest program id for reproducibility.
    """
    if not arms:
        raise ValueError("rex_select needs at least one arm")
    best: RexArm | None = None
    best_value = -1.0
    for arm in arms:
        h = arm.heuristic_value
        value = float(rng.beta(1.0 + config.c * h, 1.0 + config.c * (1.0 - h) + arm.pull_count))
        if (
            best is None
            or value > best_value
            or (value == best_value and arm.program_id < best.program_id)
        ):
            best = arm
            best_value = value
    return best


@dataclass(frozen=True)
class Attempt:
    """One consumed completion: either a candidate or a parse failure."""

    phase: str
    island: int | None
    candidate: Candidate | None
    raw_text: str | None = None
    parse_failure_reason: str | None = None
    parent_id: str | None = None

    @property
    def parse_failure(self) -> bool:
        return self.candidate is None


AttemptSink = Callable[[Attempt], None]


class FewShotProvider(Protocol):
    def pick(self, exclude_task_id: str, draw_key: int) -> tuple[Task, str] | None: ...


class FewShotPool:
    """Solved (task, solution) pairs for few-shot conditioning.

    Picks are seeded per (excluded task, draw key) so identical runs pick
    identical examples; the excluded task never returns its own solution.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._entries: list[tuple[Task, str]] = []

    def add(self, task: Task, solution_source: str):
        self._entries.append((task, solution_source))

    def __len__(self) -> int:
        return len(self._entries)

    def pick(self, exclude_task_id: str, draw_key: int) -> tuple[Task, str] | None:
        eligible = [e for e in self._entries if e[0].task_id != exclude_task_id]
        if not eligible:
            return None
        rng = np.random.default_rng(derive_seed(self.seed, "few-shot", exclude_task_id, draw_key))
        return eligible[int(rng.integers(len(eligible)))]


@dataclass
class SearchContext:
    """Backends plus run identity shared by both search phases."""

    chat: ChatBackend
    executor: Executor
    model_tag: str = "default"
    iteration: int = 0
    seed: int = 0
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    temperature: float = 1.0
    min_p: float = 0.05
    max_tokens: int = 2048
    few_shot: FewShotProvider | None = None

    def params(self, n: int, *seed_parts) -> SamplingParams:
        return SamplingParams(
            n_completions=n,
            temperature=self.temperature,
            min_p=self.min_p,
            max_tokens=self.max_tokens,
            model_tag=self.model_tag,
            seed=derive_seed(self.seed, *seed_parts),
        )


@dataclass
class PhaseStats:
    attempts: int = 0
    perfect: int = 0
    parse_failures: int = 0
    early_stopped: bool = False
    aborted: str | None = None
    candidates: list[Candidate] = field(default_factory=list)
    # refinement bookkeeping: pulls and arm pull counts per island
    pulls_per_island: dict[int, int] = field(default_factory=dict)
    arm_pull_counts: dict[int, dict[str, int]] = field(default_factory=dict)


def sample_phase(
    task: Task,
    ctx: SearchContext,
    budget: SearchBudget,
    sink: AttemptSink,
    attempts_done: int = 0,
    perfect_done: int = 0,
) -> PhaseStats:
    """Sample completions in batches until the budget or early stop is hit.

    Every completion consumes budget: parseable ones are executed and become
    candidates, the rest are recorded as parse failures. The phase stops as
    soon as a batch boundary sees ``early_stop_perfect`` perfect candidates.
    """
    stats = PhaseStats(attempts=attempts_done, perfect=perfect_done)
    batch_index = attempts_done // budget.batch_size
    while stats.attempts < budget.sample_budget:
        if stats.perfect >= budget.early_stop_perfect:
            break
        n = min(budget.batch_size, budget.sample_budget - stats.attempts)
        few_shot = ctx.few_shot.pick(task.task_id, batch_index) if ctx.few_shot else None
        messages = build_sampling_prompt(task, few_shot)
        try:
            texts = ctx.chat.complete(messages, ctx.params(n, task.task_id, SAMPLE_PHASE, batch_index))
        except BackendUnavailable as exc:
            stats.aborted = str(exc)
            break
        for text in texts:
            seq = stats.attempts
            stats.attempts += 1
            try:
                source = parse_completion(text)
            except CompletionParseError as exc:
                stats.parse_failures += 1
                sink(Attempt(SAMPLE_PHASE, None, None, raw_text=text, parse_failure_reason=exc.reason))
                continue
            program = Program(
                program_id=f"{task.task_id}:s{seq:05d}",
                source_text=source,
                provenance=Provenance.sampled(),
                origin=Origin(ctx.iteration, ctx.model_tag, ctx.seed),
            )
            candidate = Candidate(program, evaluate_program(program, task, ctx.executor, ctx.timeout_ms))
            stats.candidates.append(candidate)
            if candidate.evaluation.train_perfect:
                stats.perfect += 1
            sink(Attempt(SAMPLE_PHASE, None, candidate))
        batch_index += 1
    stats.early_stopped = stats.aborted is None and stats.perfect >= budget.early_stop_perfect
    return stats


def split_island_budgets(total: int, islands: int) -> list[int]:
    """Equal attempt shares per island; the remainder goes to island 0."""
    base = total // islands
    shares = [base] * islands
    shares[0] += total - base * islands
    return shares


def seed_arms(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Initial arms: candidates that ran cleanly on every train input."""
    return [c for c in candidates if c.evaluation.train_all_ok]


@dataclass
class _Island:
    index: int
    rng: np.random.Generator
    arms: list[RexArm]
    budget: int
    spent: int = 0
    pulls: int = 0
    seq: int = 0


def rex_refine(
    task: Task,
    initial: Sequence[Candidate],
    ctx: SearchContext,
    budget: SearchBudget,
    config: RexConfig,
    sink: AttemptSink,
    attempts_done: int = 0,
    perfect_done: int = 0,
    island_seq_start: Sequence[int] | None = None,
    attempt_budget: int | None = None,
) -> PhaseStats:
    """Refine promising candidates with island-parallel bandit search.

    Islands get equal budget shares (remainder to island 0) and execute
    pulls round-robin; a pull selects an arm, asks for
    ``n_completions_per_pull`` refinements of it (fewer on the final pull of
    an island so its budget is consumed exactly), and adds every clean child
    as a fresh arm. Children that error stay archived but never become arms.
    """
    viable = seed_arms(initial)
    if not viable:
        raise NoViableSeeds(f"task {task.task_id}: every sampled candidate errored on a train input")

    stats = PhaseStats(attempts=attempts_done, perfect=perfect_done)
    total_budget = attempt_budget if attempt_budget is not None else budget.refine_budget
    remaining_total = total_budget - attempts_done
    if remaining_total <= 0:
        return stats
    shares = split_island_budgets(remaining_total, config.islands)
    seq_start = list(island_seq_start) if island_seq_start else [0] * config.islands
    islands = [
        _Island(
            index=i,
            rng=np.random.default_rng(config.seed ^ i),
            arms=[RexArm(c, c.evaluation.train_accuracy) for c in viable],
            budget=shares[i],
            seq=seq_start[i],
        )
        for i in range(config.islands)
    ]

    active = [isl for isl in islands if isl.budget > 0]
    while active:
        if stats.perfect >= budget.early_stop_perfect:
            stats.early_stopped = True
            break
        still_active = []
        for island in active:
            if stats.perfect >= budget.early_stop_perfect or stats.aborted:
                break
            k = min(config.n_completions_per_pull, island.budget - island.spent)
            arm = rex_select(island.arms, config, island.rng)
            messages = build_refinement_prompt(task, arm.program.source_text, arm.candidate.evaluation)
            try:
                texts = ctx.chat.complete(
                    messages,
                    ctx.params(k, task.task_id, REFINE_PHASE, island.index, island.pulls),
                )
            except BackendUnavailable as exc:
                stats.aborted = str(exc)
                break
            arm.pull_count += k
            island.spent += k
            island.pulls += 1
            for text in texts:
                seq = island.seq
                island.seq += 1
                stats.attempts += 1
                try:
                    source = parse_completion(text)
                except CompletionParseError as exc:
                    stats.parse_failures += 1
                    sink(
                        Attempt(
                            REFINE_PHASE,
                            island.index,
                            None,
                            raw_text=text,
                            parse_failure_reason=exc.reason,
                            parent_id=arm.program_id,
                        )
                    )
                    continue
                program = Program(
                    program_id=f"{task.task_id}:i{island.index}r{seq:05d}",
                    source_text=source,
                    provenance=Provenance.refined(arm.program_id),
                    origin=Origin(ctx.iteration, ctx.model_tag, ctx.seed, island=island.index),
                )
                candidate = Candidate(
                    program, evaluate_program(program, task, ctx.executor, ctx.timeout_ms)
                )
                stats.candidates.append(candidate)
                if candidate.evaluation.train_perfect:
                    stats.perfect += 1
                if candidate.evaluation.train_all_ok:
                    island.arms.append(RexArm(candidate, candidate.evaluation.train_accuracy))
                sink(Attempt(REFINE_PHASE, island.index, candidate, parent_id=arm.program_id))
            if island.spent < island.budget:
                still_active.append(island)
        if stats.aborted:
            break
        active = still_active
    stats.early_stopped = stats.aborted is None and stats.perfect >= budget.early_stop_perfect
    for island in islands:
        stats.pulls_per_island[island.index] = island.pulls
        stats.arm_pull_counts[island.index] = {
            arm.program_id: arm.pull_count for arm in island.arms if arm.pull_count
        }
    return stats


@dataclass
class SearchResult:
    task_id: str
    attempts: list[Attempt]
    sample: PhaseStats
    refine: PhaseStats
    no_viable_seeds: bool = False

    @property
    def candidates(self) -> list[Candidate]:
        return list(self.sample.candidates) + list(self.refine.candidates)

    @property
    def total_attempts(self) -> int:
        return self.sample.attempts + self.refine.attempts

    @property
    def aborted(self) -> str | None:
        return self.sample.aborted or self.refine.aborted

    def digest(self) -> str:
        """Stable content hash for whole-run determinism checks."""
        payload = []
        for attempt in self.attempts:
            if attempt.candidate is None:
                payload.append([attempt.phase, attempt.island, None, attempt.parse_failure_reason])
            else:
                ev = attempt.candidate.evaluation
                payload.append(
                    [
                        attempt.phase,
                        attempt.island,
                        attempt.candidate.program.program_id,
                        attempt.candidate.program.source_text,
                        ev.train_accuracy,
                        [o.status for o in ev.train_outcomes + ev.test_outcomes],
                    ]
                )
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def run_search(
    task: Task,
    ctx: SearchContext,
    budget: SearchBudget = SearchBudget(),
    rex: RexConfig = RexConfig(),
    sink: AttemptSink | None = None,
) -> SearchResult:
    """Full Sample&Refine for one task; every attempt reaches the sink.

    Partial results always survive: a backend failure in either phase is
    recorded on that phase's stats rather than thrown away, and an all-error
    sampling pool simply skips refinement.
    """
    attempts: list[Attempt] = []

    def collect(attempt: Attempt):
        attempts.append(attempt)
        if sink is not None:
            sink(attempt)

    sample_stats = sample_phase(task, ctx, budget, collect)
    no_viable = False
    refine_ceiling = budget.refine_ceiling(sample_stats.attempts)
    if sample_stats.aborted is None and refine_ceiling > 0:
        try:
            refine_stats = rex_refine(
                task, sample_stats.candidates, ctx, budget, rex, collect,
                attempt_budget=refine_ceiling,
            )
        except NoViableSeeds:
            no_viable = True
            refine_stats = PhaseStats()
    else:
        refine_stats = PhaseStats()
    return SearchResult(
        task_id=task.task_id,
        attempts=attempts,
        sample=sample_stats,
        refine=refine_stats,
        no_viable_seeds=no_viable,
    )
