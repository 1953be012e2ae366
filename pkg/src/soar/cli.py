"""Command-line interface.

Exit codes: 0 success, 2 partial failure (some tasks errored or aborted),
3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .archive import read_archive
from .datasets import REFINEMENT_KIND, SAMPLING_KIND, export_dataset
from .errors import ConfigError, EmptyPool, SoarError
from .grids import render_grid
from .reporting import build_report, dump_report, render_report_text, split_candidates, votable
from .runner import (
    RunConfig,
    build_chat_backend,
    build_embedding_backend,
    build_executor_backend,
    config_from_dict,
    load_config,
    run_iteration,
)
from .search import SearchBudget, SearchContext, run_search
from .selection import (
    RelabeledExample,
    SelectionPolicy,
    build_refinement_examples,
    relabel,
    select_refinement_data,
    select_sampling_data,
    ttt_select,
)
from .seeding import derive_seed
from .tasks import load_tasks
from .voting import VoteConfig, weighted_majority_vote


def _config_for(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return config_from_dict({"tasks": [], "seed": getattr(args, "seed", 0)})


def _load_archive_tasks(args):
    records = read_archive(args.archive)
    tasks = load_tasks(args.tasks) if args.tasks else []
    return records, tasks


def cmd_solve(args) -> int:
    config = _config_for(args)
    tasks = load_tasks(args.task_file)
    task = tasks[0] if args.task_id is None else next(t for t in tasks if t.task_id == args.task_id)
    chat = build_chat_backend(config)
    executor = build_executor_backend(config)
    ctx = SearchContext(
        chat=chat,
        executor=executor,
        model_tag=config.model_tag,
        seed=args.seed if args.seed is not None else config.seed,
        timeout_ms=config.timeout_ms,
    )
    budget = config.budget if args.config else SearchBudget(**_budget_overrides(args))
    result = run_search(task, ctx, budget, config.rex)
    print(
        f"task {task.task_id}: attempts={result.total_attempts} "
        f"sample={result.sample.attempts} refine={result.refine.attempts} "
        f"perfect={result.sample.perfect + result.refine.perfect}"
    )
    try:
        ranked = weighted_majority_vote(votable(result.candidates), config.vote)
    except EmptyPool:
        print("no candidate produced complete test outputs")
        return 2 if result.aborted else 0
    for rank, pattern in enumerate(ranked[: config.vote.n_output], start=1):
        print(
            f"\n#{rank} weight={pattern.weight:.3f} count={pattern.count} "
            f"mean_train_accuracy={pattern.group_train_accuracy:.3f}"
        )
        for i, grid in enumerate(pattern.grids, start=1):
            print(f"test output {i}:")
            print(render_grid(grid))
    if hasattr(executor, "close"):
        executor.close()
    return 2 if result.aborted else 0


def _budget_overrides(args) -> dict:
    overrides = {}
    if args.sample_budget is not None:
        overrides["sample_budget"] = args.sample_budget
    if args.refine_budget is not None:
        overrides["refine_budget"] = args.refine_budget
    return overrides


def cmd_iterate(args) -> int:
    config = load_config(args.config)
    manifest = run_iteration(config, resume=args.resume)
    print(f"iteration {manifest['iteration']} complete: {len(manifest['tasks'])} tasks")
    for task_id, entry in manifest["tasks"].items():
        flags = []
        if entry.get("solved_vote"):
            flags.append("vote")
        if entry.get("solved_oracle"):
            flags.append("oracle")
        if entry.get("aborted"):
            flags.append("ABORTED")
        if entry.get("failure"):
            flags.append("FAILED")
        print(f"  {task_id}: attempts={entry['attempts']} {' '.join(flags)}".rstrip())
    partial = manifest["failed_tasks"] or any(
        e.get("aborted") for e in manifest["tasks"].values()
    )
    return 2 if partial else 0


def cmd_vote(args) -> int:
    records, tasks = _load_archive_tasks(args)
    tasks_by_id = {t.task_id: t for t in tasks}
    config = VoteConfig(c=args.c, n_output=args.n_output, mode=args.mode)
    by_task = split_candidates(records)
    output = {}
    for task_id in sorted(by_task):
        if args.task_id and task_id != args.task_id:
            continue
        pool = votable(by_task[task_id]["sample"] + by_task[task_id]["refine"])
        try:
            ranked = weighted_majority_vote(pool, config)
        except EmptyPool:
            output[task_id] = {"patterns": [], "solved": None}
            continue
        entry = {
            "patterns": [
                {
                    "weight": p.weight,
                    "count": p.count,
                    "mean_train_accuracy": p.group_train_accuracy,
                    "outputs": [g.to_lists() for g in p.grids],
                }
                for p in ranked[: config.n_output]
            ]
        }
        task = tasks_by_id.get(task_id)
        if task is not None and task.has_truth and args.score:
            from .voting import oracle_score, score_task

            entry["solved"] = score_task(ranked, task.test_outputs, config.n_output)
            entry["oracle"] = oracle_score(
                by_task[task_id]["sample"] + by_task[task_id]["refine"], task.test_outputs
            )
        output[task_id] = entry
    text = json.dumps(output, sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    records, tasks = _load_archive_tasks(args)
    config = _config_for(args)
    report = build_report(
        records,
        tasks,
        vote_config=config.vote,
        embedder=build_embedding_backend(config),
        seed=config.seed,
        use_truth=not args.no_truth,
    )
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(dump_report(report))
        (out_dir / "report.tsv").write_text(render_report_text(report))
        print(f"report written to {out_dir}")
    else:
        sys.stdout.write(render_report_text(report))
    return 0


def cmd_build_dataset(args) -> int:
    records, tasks = _load_archive_tasks(args)
    config = _config_for(args)
    tasks_by_id = {t.task_id: t for t in tasks}
    by_task = split_candidates(records)
    policy = SelectionPolicy(strategy=args.strategy, k_per_task=args.k, seed=args.seed)
    executor = build_executor_backend(config)

    examples = []
    for task_id in sorted(by_task):
        task = tasks_by_id.get(task_id)
        if task is None:
            continue
        slot = by_task[task_id]
        pool = slot["sample"] + slot["refine"]
        try:
            if args.kind == SAMPLING_KIND:
                examples.extend(select_sampling_data(pool, task, policy))
            else:
                by_id = {c.program_id: c for c in pool}
                successful = build_refinement_examples(task, by_id, slot["refine"])
                examples.extend(select_refinement_data(successful, policy))
        except SoarError:
            continue
    digest = export_dataset(
        examples,
        args.kind,
        args.out,
        augment_shuffle=not args.no_shuffle,
        seed=args.seed,
        executor=executor if args.verify else None,
    )
    print(f"{len(examples)} records -> {args.out} (sha256 {digest[:12]}...)")
    if hasattr(executor, "close"):
        executor.close()
    return 0


def cmd_ttt_select(args) -> int:
    records, tasks = _load_archive_tasks(args)
    config = _config_for(args)
    tasks_by_id = {t.task_id: t for t in tasks}
    by_task = split_candidates(records)
    executor = build_executor_backend(config)
    examples = []
    for task_id in sorted(by_task):
        task = tasks_by_id.get(task_id)
        if task is None:
            continue
        pool = votable(by_task[task_id]["sample"] + by_task[task_id]["refine"])
        try:
            picked = ttt_select(pool, args.n, c=args.c, seed=derive_seed(args.seed, task_id))
        except EmptyPool:
            continue
        for candidate in picked:
            example = relabel(candidate.program, task, candidate.evaluation)
            if isinstance(example, RelabeledExample):
                examples.append(example)
    digest = export_dataset(
        examples,
        SAMPLING_KIND,
        args.out,
        augment_shuffle=not args.no_shuffle,
        seed=args.seed,
        executor=executor if args.verify else None,
    )
    print(f"{len(examples)} records -> {args.out} (sha256 {digest[:12]}...)")
    if hasattr(executor, "close"):
        executor.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="Sample&Refine one task and print the top patterns")
    p.add_argument("task_file")
    p.add_argument("--task-id")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-budget", type=int, default=None)
    p.add_argument("--refine-budget", type=int, default=None)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("iterate", help="run one self-improvement iteration from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_iterate)

    p = sub.add_parser("vote", help="rank archived candidates by weighted majority vote")
    p.add_argument("--archive", required=True)
    p.add_argument("--tasks")
    p.add_argument("--task-id")
    p.add_argument("--out")
    p.add_argument("--c", type=float, default=1000.0)
    p.add_argument("--n-output", type=int, default=2)
    p.add_argument(
        "--mode", default="count_plus_mean_accuracy",
        choices=["count_plus_mean_accuracy", "sum_of_accuracies"],
    )
    p.add_argument("--score", action="store_true", help="also emit solved/oracle flags")
    p.set_defaults(fn=cmd_vote)

    p = sub.add_parser("report", help="per-task and aggregate metrics from an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--tasks")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--no-truth", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("build-dataset", help="export a fine-tuning dataset from an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--kind", choices=[SAMPLING_KIND, REFINEMENT_KIND], default=SAMPLING_KIND)
    p.add_argument("--strategy", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--verify", action="store_true", help="re-execute solutions before export")
    p.set_defaults(fn=cmd_build_dataset)

    p = sub.add_parser("ttt-select", help="vote-weighted test-time-training selection")
    p.add_argument("--archive", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("-N", "--n", type=int, required=True)
    p.add_argument("--c", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--verify", action="store_true")
    p.set_defaults(fn=cmd_ttt_select)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except SoarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
