"""Iteration controller: configuration, search orchestration, datasets, manifest.

One iteration runs Sample&Refine per task (wave-parallel across tasks,
archive writes serialized in task order so runs replay byte-identically),
then builds the sampling and refinement datasets per the configured policies
and writes a manifest whose counters are re-derivable from the archive.

In test-time mode a truth firewall is installed for the whole pipeline:
any ground-truth read raises, dataset selection switches to vote-weighted
sampling on train-accuracy signals only, and no refinement dataset is built.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .archive import ArchiveRecord, ArchiveWriter, read_archive
from .chat import ChatBackend, OpenAIChatBackend
from .datasets import REFINEMENT_KIND, SAMPLING_KIND, export_dataset
from .embeddings import EmbeddingBackend, HashingEmbeddingBackend, OpenAIEmbeddingBackend
from .errors import ConfigError, EmptyPool, EmptySlice, MissingTruth, NoViableSeeds, SoarError
from .executor import Executor, MockExecutor, WorkerPool
from .mocks import BankChatBackend, bank_executor
from .programs import Candidate
from .reporting import build_report, dump_report, render_report_text, split_candidates, votable
from .search import (
    Attempt,
    FewShotPool,
    PhaseStats,
    RexConfig,
    SearchBudget,
    SearchContext,
    rex_refine,
    sample_phase,
)
from .seeding import derive_seed
from .selection import (
    RelabeledExample,
    SelectionPolicy,
    build_refinement_examples,
    dedup,
    filter_hybrid,
    relabel,
    select_refinement_data,
    select_sampling_data,
    ttt_select,
)
from .tasks import Task, forbid_truth_reads, load_tasks
from .voting import VoteConfig, oracle_score, score_task, weighted_majority_vote

TRAIN_MODE = "train"
TEST_TIME_MODE = "test-time"

ENV_CHAT_URL = "SOAR_CHAT_URL"
ENV_CHAT_KEY = "SOAR_CHAT_KEY"
ENV_EMBED_URL = "SOAR_EMBED_URL"


@dataclass
class RunConfig:
    tasks: list[str]
    mode: str = TRAIN_MODE
    seed: int = 0
    iteration: int = 0
    model_tag: str = "mock"
    output_dir: str = "soar-out"
    budget: SearchBudget = field(default_factory=SearchBudget)
    rex: RexConfig = field(default_factory=RexConfig)
    vote: VoteConfig = field(default_factory=VoteConfig)
    sampling_policy: SelectionPolicy = field(
        default_factory=lambda: SelectionPolicy("greedy-diverse")
    )
    refinement_policy: SelectionPolicy = field(default_factory=lambda: SelectionPolicy("diverse"))
    ttt_n: int = 50
    chat: dict = field(default_factory=lambda: {"kind": "bank-mock"})
    embedding: dict = field(default_factory=lambda: {"kind": "hashing-mock"})
    executor: dict = field(default_factory=lambda: {"kind": "bank-mock"})
    models: dict = field(default_factory=dict)
    cross_task_parallelism: int = 4
    clock: str = "real"
    timeout_ms: int = 2000
    augment_shuffle: bool = True
    dedup_enabled: bool = True
    dedup_threshold: float = 0.9
    few_shot: bool = True
    few_shot_archive: str | None = None
    emit_report: bool = True
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    """Parse a JSON run configuration; endpoint credentials can come from env."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be an object")
    try:
        tasks = raw["tasks"]
        if isinstance(tasks, str):
            tasks = [tasks]
        mode = raw.get("mode", TRAIN_MODE)
        if mode not in (TRAIN_MODE, TEST_TIME_MODE):
            raise ConfigError(f"unknown mode {mode!r}")
        config = RunConfig(
            tasks=list(tasks),
            mode=mode,
            seed=int(raw.get("seed", 0)),
            iteration=int(raw.get("iteration", 0)),
            model_tag=raw.get("model_tag", "mock"),
            output_dir=raw.get("output_dir", "soar-out"),
            budget=SearchBudget(**raw.get("budget", {})),
            rex=RexConfig(**{"seed": int(raw.get("seed", 0)), **raw.get("rex", {})}),
            vote=VoteConfig(**raw.get("vote", {})),
            sampling_policy=SelectionPolicy(
                **{
                    "strategy": "greedy-diverse",
                    "seed": int(raw.get("seed", 0)),
                    **raw.get("sampling_policy", {}),
                }
            ),
            refinement_policy=SelectionPolicy(
                **{
                    "strategy": "diverse",
                    "seed": int(raw.get("seed", 0)),
                    **raw.get("refinement_policy", {}),
                }
            ),
            ttt_n=int(raw.get("ttt_n", 50)),
            chat=dict(raw.get("chat", {"kind": "bank-mock"})),
            embedding=dict(raw.get("embedding", {"kind": "hashing-mock"})),
            executor=dict(raw.get("executor", {"kind": "bank-mock"})),
            models=dict(raw.get("models", {})),
            cross_task_parallelism=int(raw.get("cross_task_parallelism", 4)),
            clock=raw.get("clock", "real"),
            timeout_ms=int(raw.get("timeout_ms", 2000)),
            augment_shuffle=bool(raw.get("augment_shuffle", True)),
            dedup_enabled=bool(raw.get("dedup", {}).get("enabled", True)),
            dedup_threshold=float(raw.get("dedup", {}).get("threshold", 0.9)),
            few_shot=bool(raw.get("few_shot", True)),
            few_shot_archive=raw.get("few_shot_archive"),
            emit_report=bool(raw.get("report", True)),
            raw=raw,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if config.clock not in ("real", "fixed"):
        raise ConfigError(f"unknown clock {config.clock!r}")
    return config


def build_chat_backend(config: RunConfig) -> ChatBackend:
    spec = dict(config.chat)
    if config.models and config.model_tag in config.models:
        spec = {"kind": "openai", **config.models[config.model_tag]}
    kind = spec.get("kind", "bank-mock")
    if kind == "bank-mock":
        return BankChatBackend(
            prose_rate=float(spec.get("prose_rate", 0.05)), salt=int(spec.get("salt", 0))
        )
    if kind == "openai":
        base_url = os.environ.get(ENV_CHAT_URL) or spec.get("base_url")
        if not base_url:
            raise ConfigError("chat backend needs base_url (or SOAR_CHAT_URL)")
        return OpenAIChatBackend(
            base_url=base_url,
            api_key=os.environ.get(ENV_CHAT_KEY) or spec.get("api_key"),
            model=spec.get("model", config.model_tag),
            supports_min_p=bool(spec.get("supports_min_p", True)),
            requests_per_second=spec.get("requests_per_second"),
        )
    raise ConfigError(f"unknown chat backend kind {kind!r}")


def build_embedding_backend(config: RunConfig) -> EmbeddingBackend:
    spec = config.embedding
    kind = spec.get("kind", "hashing-mock")
    if kind == "hashing-mock":
        return HashingEmbeddingBackend(dim=int(spec.get("dim", 64)))
    if kind == "openai":
        base_url = os.environ.get(ENV_EMBED_URL) or spec.get("base_url")
        if not base_url:
            raise ConfigError("embedding backend needs base_url (or SOAR_EMBED_URL)")
        return OpenAIEmbeddingBackend(
            base_url=base_url,
            api_key=os.environ.get(ENV_CHAT_KEY) or spec.get("api_key"),
            model=spec.get("model", "default"),
        )
    raise ConfigError(f"unknown embedding backend kind {kind!r}")


def build_executor_backend(config: RunConfig) -> Executor:
    spec = config.executor
    kind = spec.get("kind", "bank-mock")
    if kind == "bank-mock":
        return bank_executor()
    if kind == "mock-table":
        # table of source -> transform must be injected programmatically
        return MockExecutor({})
    if kind == "worker":
        command = spec.get("command")
        if not command:
            raise ConfigError("worker executor needs a command")
        return WorkerPool(
            command, size=int(spec.get("pool_size", 4)), timeout_ms=config.timeout_ms
        )
    raise ConfigError(f"unknown executor kind {kind!r}")


class _FixedClock:
    """Logical clock for byte-reproducible archives."""

    def __init__(self):
        self.now = 0

    def __call__(self) -> float:
        value = self.now
        self.now += 1
        return float(value)


@dataclass
class _TaskState:
    """Per-task progress derived purely from archived records."""

    sample_attempts: int = 0
    sample_perfect: int = 0
    refine_attempts: int = 0
    refine_perfect: int = 0
    island_seq: dict[int, int] = field(default_factory=dict)
    sample_candidates: list[Candidate] = field(default_factory=list)
    refine_candidates: list[Candidate] = field(default_factory=list)


def derive_task_state(records: Sequence[ArchiveRecord], task_id: str) -> _TaskState:
    state = _TaskState()
    for record in records:
        if record.task_id != task_id:
            continue
        if record.phase == "sample":
            state.sample_attempts += 1
            if record.candidate is not None:
                state.sample_candidates.append(record.candidate)
                if record.candidate.evaluation.train_perfect:
                    state.sample_perfect += 1
        else:
            state.refine_attempts += 1
            if record.island is not None:
                state.island_seq[record.island] = state.island_seq.get(record.island, 0) + 1
            if record.candidate is not None:
                state.refine_candidates.append(record.candidate)
                if record.candidate.evaluation.train_perfect:
                    state.refine_perfect += 1
    return state


@dataclass
class TaskSearchOutcome:
    task_id: str
    attempts: list[Attempt]
    sample: PhaseStats
    refine: PhaseStats
    no_viable_seeds: bool = False
    failure: str | None = None

    @property
    def candidates(self) -> list[Candidate]:
        return list(self.sample.candidates) + list(self.refine.candidates)


def continue_search(
    task: Task,
    ctx: SearchContext,
    budget: SearchBudget,
    rex: RexConfig,
    state: _TaskState,
) -> TaskSearchOutcome:
    """Run (or finish) one task's Sample&Refine from archived progress."""
    attempts: list[Attempt] = []

    sample_stats = sample_phase(
        task,
        ctx,
        budget,
        attempts.append,
        attempts_done=state.sample_attempts,
        perfect_done=state.sample_perfect,
    )
    all_sample = state.sample_candidates + sample_stats.candidates
    no_viable = False
    refine_stats = PhaseStats(attempts=state.refine_attempts, perfect=state.refine_perfect)
    refine_ceiling = budget.refine_ceiling(sample_stats.attempts)
    if sample_stats.aborted is None and refine_ceiling > state.refine_attempts:
        islands = rex.islands
        seq_start = [state.island_seq.get(i, 0) for i in range(islands)]
        try:
            refine_stats = rex_refine(
                task,
                all_sample + state.refine_candidates,
                ctx,
                budget,
                rex,
                attempts.append,
                attempts_done=state.refine_attempts,
                perfect_done=state.refine_perfect,
                island_seq_start=seq_start,
                attempt_budget=refine_ceiling,
            )
        except NoViableSeeds:
            no_viable = True
    return TaskSearchOutcome(
        task_id=task.task_id,
        attempts=attempts,
        sample=sample_stats,
        refine=refine_stats,
        no_viable_seeds=no_viable,
    )


def _eligible_for_datasets(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Dataset pools drop hybrid programs at build time."""
    return [c for c in candidates if filter_hybrid(c.program, c.evaluation)]


def _build_train_datasets(
    config: RunConfig,
    tasks: Sequence[Task],
    records: Sequence[ArchiveRecord],
    embedder: EmbeddingBackend,
    executor: Executor,
    out_dir: Path,
) -> dict:
    by_task = split_candidates(records)
    tasks_by_id = {t.task_id: t for t in tasks}

    sampling_examples: list[RelabeledExample] = []
    refinement_examples = []
    for task_id in sorted(by_task):
        task = tasks_by_id.get(task_id)
        if task is None:
            continue
        slot = by_task[task_id]
        pool = _eligible_for_datasets(slot["sample"] + slot["refine"])
        try:
            sampling_examples.extend(select_sampling_data(pool, task, config.sampling_policy))
        except (EmptySlice, MissingTruth):
            pass
        if not task.has_truth:
            continue
        by_id = {c.program_id: c for c in slot["sample"] + slot["refine"]}
        successful = build_refinement_examples(task, by_id, _eligible_for_datasets(slot["refine"]))
        if successful:
            try:
                refinement_examples.extend(
                    select_refinement_data(successful, config.refinement_policy)
                )
            except EmptySlice:
                pass

    if config.dedup_enabled and sampling_examples:
        sampling_examples = dedup(sampling_examples, embedder, config.dedup_threshold)
    if config.dedup_enabled and refinement_examples:
        refinement_examples = dedup(refinement_examples, embedder, config.dedup_threshold)

    datasets = {}
    sampling_path = out_dir / "dataset_sampling.jsonl"
    digest = export_dataset(
        sampling_examples,
        SAMPLING_KIND,
        sampling_path,
        augment_shuffle=config.augment_shuffle,
        seed=derive_seed(config.seed, "export", SAMPLING_KIND),
        executor=executor,
        timeout_ms=config.timeout_ms,
    )
    datasets["sampling"] = {
        "path": sampling_path.name,
        "sha256": digest,
        "records": len(sampling_examples),
    }
    refinement_path = out_dir / "dataset_refinement.jsonl"
    digest = export_dataset(
        refinement_examples,
        REFINEMENT_KIND,
        refinement_path,
        augment_shuffle=config.augment_shuffle,
        seed=derive_seed(config.seed, "export", REFINEMENT_KIND),
        executor=executor,
        timeout_ms=config.timeout_ms,
    )
    datasets["refinement"] = {
        "path": refinement_path.name,
        "sha256": digest,
        "records": len(refinement_examples),
    }
    return datasets


def _build_ttt_dataset(
    config: RunConfig,
    tasks: Sequence[Task],
    records: Sequence[ArchiveRecord],
    embedder: EmbeddingBackend,
    executor: Executor,
    out_dir: Path,
) -> dict:
    by_task = split_candidates(records)
    tasks_by_id = {t.task_id: t for t in tasks}
    examples: list[RelabeledExample] = []
    for task_id in sorted(by_task):
        task = tasks_by_id.get(task_id)
        if task is None:
            continue
        slot = by_task[task_id]
        pool = _eligible_for_datasets(slot["sample"] + slot["refine"])
        try:
            picked = ttt_select(
                pool,
                n_total=config.ttt_n,
                c=config.vote.c,
                seed=derive_seed(config.seed, "ttt", task_id),
            )
        except EmptyPool:
            continue
        for candidate in picked:
            example = relabel(candidate.program, task, candidate.evaluation)
            if isinstance(example, RelabeledExample):
                examples.append(example)

    if config.dedup_enabled and examples:
        examples = dedup(examples, embedder, config.dedup_threshold)

    sampling_path = out_dir / "dataset_sampling.jsonl"
    digest = export_dataset(
        examples,
        SAMPLING_KIND,
        sampling_path,
        augment_shuffle=config.augment_shuffle,
        seed=derive_seed(config.seed, "export", SAMPLING_KIND),
        executor=executor,
        timeout_ms=config.timeout_ms,
    )
    return {
        "sampling": {"path": sampling_path.name, "sha256": digest, "records": len(examples)},
        "refinement": None,
    }


def _populate_few_shot(
    pool: FewShotPool, tasks_by_id: dict[str, Task], candidates_by_task: dict[str, list[Candidate]]
):
    for task_id in sorted(candidates_by_task):
        task = tasks_by_id.get(task_id)
        if task is None:
            continue
        perfect = [
            c for c in candidates_by_task[task_id] if c.evaluation.train_perfect
        ]
        if perfect:
            best = min(perfect, key=lambda c: (len(c.program.source_text), c.program_id))
            pool.add(task, best.program.source_text)


def run_iteration(config: RunConfig, resume: bool = False) -> dict:
    """One full Phase-1 + dataset-build iteration; returns the manifest dict."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    archive_path = out_dir / "archive.jsonl"
    if archive_path.exists() and not resume:
        raise ConfigError(f"{archive_path} already exists; pass resume to continue it")

    tasks = []
    for task_path in config.tasks:
        tasks.extend(load_tasks(task_path))
    tasks.sort(key=lambda t: t.task_id)
    tasks_by_id = {t.task_id: t for t in tasks}

    chat = build_chat_backend(config)
    embedder = build_embedding_backend(config)
    executor = build_executor_backend(config)

    prior_records = read_archive(archive_path) if archive_path.exists() else []
    next_record_id = prior_records[-1].record_id + 1 if prior_records else 0
    clock = _FixedClock() if config.clock == "fixed" else None

    few_shot_pool = FewShotPool(seed=derive_seed(config.seed, "few-shot-pool"))
    if config.few_shot and config.few_shot_archive:
        previous = read_archive(config.few_shot_archive)
        by_task: dict[str, list[Candidate]] = {}
        for record in previous:
            if record.candidate is not None:
                by_task.setdefault(record.task_id, []).append(record.candidate)
        _populate_few_shot(few_shot_pool, tasks_by_id, by_task)

    firewall = forbid_truth_reads() if config.mode == TEST_TIME_MODE else nullcontext()
    failed_tasks: list[str] = []
    task_entries: dict[str, dict] = {}

    with firewall:
        with ArchiveWriter(archive_path, start_record_id=next_record_id, clock=clock) as writer:
            parallelism = max(1, config.cross_task_parallelism)
            for wave_start in range(0, len(tasks), parallelism):
                wave = tasks[wave_start : wave_start + parallelism]

                def search_one(task: Task) -> TaskSearchOutcome:
                    ctx = SearchContext(
                        chat=chat,
                        executor=executor,
                        model_tag=config.model_tag,
                        iteration=config.iteration,
                        seed=config.seed,
                        timeout_ms=config.timeout_ms,
                        few_shot=few_shot_pool if config.few_shot else None,
                    )
                    state = derive_task_state(prior_records, task.task_id)
                    try:
                        return continue_search(task, ctx, config.budget, config.rex, state)
                    except SoarError as exc:
                        return TaskSearchOutcome(
                            task_id=task.task_id,
                            attempts=[],
                            sample=PhaseStats(),
                            refine=PhaseStats(),
                            failure=str(exc),
                        )

                if parallelism == 1 or len(wave) == 1:
                    outcomes = [search_one(task) for task in wave]
                else:
                    with ThreadPoolExecutor(max_workers=parallelism) as pool:
                        outcomes = list(pool.map(search_one, wave))

                for task, outcome in zip(wave, outcomes):
                    for attempt in outcome.attempts:
                        writer.append_attempt(attempt, task.task_id, config.iteration)
                    if outcome.failure is not None:
                        failed_tasks.append(task.task_id)
                    entry = {
                        "attempts": outcome.sample.attempts + outcome.refine.attempts,
                        "sample_attempts": outcome.sample.attempts,
                        "refine_attempts": outcome.refine.attempts,
                        "perfect_count": outcome.sample.perfect + outcome.refine.perfect,
                        "no_viable_seeds": outcome.no_viable_seeds,
                        "aborted": outcome.sample.aborted or outcome.refine.aborted,
                        "failure": outcome.failure,
                    }
                    task_entries[task.task_id] = entry
                # solved tasks from this wave become few-shot material
                wave_candidates = {
                    o.task_id: o.candidates for o in outcomes if o.failure is None
                }
                if config.few_shot:
                    _populate_few_shot(few_shot_pool, tasks_by_id, wave_candidates)

        records = read_archive(archive_path)

        for task in tasks:
            entry = task_entries.setdefault(task.task_id, {})
            state = derive_task_state(records, task.task_id)
            candidates = state.sample_candidates + state.refine_candidates
            entry["attempts"] = state.sample_attempts + state.refine_attempts
            entry["sample_attempts"] = state.sample_attempts
            entry["refine_attempts"] = state.refine_attempts
            entry["perfect_count"] = state.sample_perfect + state.refine_perfect
            if config.mode == TRAIN_MODE and task.has_truth and candidates:
                pool = votable(candidates)
                try:
                    ranked = weighted_majority_vote(pool, config.vote)
                    entry["solved_vote"] = score_task(
                        ranked, task.test_outputs, config.vote.n_output
                    )
                except EmptyPool:
                    entry["solved_vote"] = False
                entry["solved_oracle"] = oracle_score(candidates, task.test_outputs)
            else:
                entry["solved_vote"] = None
                entry["solved_oracle"] = None

        if config.mode == TRAIN_MODE:
            datasets = _build_train_datasets(config, tasks, records, embedder, executor, out_dir)
        else:
            datasets = _build_ttt_dataset(config, tasks, records, embedder, executor, out_dir)

        report_files = {}
        if config.emit_report:
            report = build_report(
                records,
                tasks,
                vote_config=config.vote,
                embedder=embedder,
                seed=config.seed,
                use_truth=config.mode == TRAIN_MODE,
            )
            (out_dir / "report.json").write_text(dump_report(report))
            (out_dir / "report.tsv").write_text(render_report_text(report))
            report_files = {"json": "report.json", "tsv": "report.tsv"}

    manifest = {
        "iteration": config.iteration,
        "model_tag": config.model_tag,
        "mode": config.mode,
        "seed": config.seed,
        "budgets": {
            "sample_budget": config.budget.sample_budget,
            "refine_budget": config.budget.refine_budget,
            "batch_size": config.budget.batch_size,
            "early_stop_perfect": config.budget.early_stop_perfect,
        },
        "config_hash": config.config_hash(),
        "min_p_forwarded": getattr(chat, "min_p_forwarded", None),
        "tasks": {tid: task_entries[tid] for tid in sorted(task_entries)},
        "datasets": datasets,
        "report": report_files,
        "failed_tasks": sorted(failed_tasks),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    if hasattr(executor, "close"):
        executor.close()
    return manifest
