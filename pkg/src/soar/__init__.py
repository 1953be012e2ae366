"""SOAR: evolutionary program synthesis with self-improving LLM operators.

Sample&Refine search over grid-transformation programs, weighted majority
voting, and hindsight-relabeled dataset export for fine-tuning loops.
"""

from .grids import Grid, grid_equal, render_grid
from .programs import Candidate, CandidateEvaluation, Origin, Outcome, Program, Provenance
from .search import RexConfig, SearchBudget, run_search
from .tasks import Task, load_tasks, parse_task, serialize_task
from .voting import VoteConfig, VotePattern, weighted_majority_vote

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CandidateEvaluation",
    "Grid",
    "Origin",
    "Outcome",
    "Program",
    "Provenance",
    "RexConfig",
    "SearchBudget",
    "Task",
    "VoteConfig",
    "VotePattern",
    "grid_equal",
    "load_tasks",
    "parse_task",
    "render_grid",
    "run_search",
    "serialize_task",
    "weighted_majority_vote",
    "__version__",
]
