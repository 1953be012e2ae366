"""Chat prompt construction and completion parsing.

The sampling and refinement user messages reproduce a fixed wording
byte-for-byte; the golden-transcript tests pin every line, so any edit here
must update those transcripts deliberately.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import CompletionParseError
from .grids import Grid, grid_equal, render_grid
from .programs import CandidateEvaluation, Outcome
from .tasks import Task


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str

    def __post_init__(self):
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


SYSTEM_PROMPT = (
    "You are an AI assistant specialized in solving Abstract Reasoning Corpus "
    "(ARC-AGI) tasks by reasoning and generating Python code."
)

SAMPLING_PREAMBLE = """You are an AI assistant specialized in solving Abstract Reasoning Corpus (ARC-AGI) tasks by generating Python code.
Your goal is to analyze input-output grid pairs. The outputs were produced by applying a transformation rule to the inputs. Implement the transformation rules as a Python function.
You should only write the implemented the transformation in code.

You must write code in triple backticks (```python and then ```). You must write a function called `transform` which takes a single argument, the input grid as `list[list[int]]`, and returns the transformed grid (also as `list[list[int]]`).
You should make sure that you implement a version of the transformation which works in general (at least for all given input-output pairs and test input pairs).
The number in the input grid can be mapped to the following colors: 0:Black; 1:Blue; 2:Red; 3:Green; 4:Yellow; 5:Grey; 6:Pink; 7:Orange; 8:Purple; 9:Brown"""

REFINEMENT_PREAMBLE = """You are an AI assistant specialized in solving Abstract Reasoning Corpus (ARC-AGI) tasks by repairing Python code implementations.
Your goal is to analyze input-output grid pairs. The outputs were produced by applying a transformation rule to the inputs.
You will be given a python function `transform` that was supposed to implement the transformation rule, but it is not working correctly for all inputs.
You role is to fix this `transform` function.

Your solution should be:
- Accurate: Correctly fix the transformation for all given inputs so they give correct outputs as provided (it should also work for all test inputs)
- Comprehensive: Handles all possible input scenarios
- Well-structured: Uses clear, readable, and efficient code

The number in the input grid can be mapped to the following colors: 0:Black; 1:Blue; 2:Red; 3:Green; 4:Yellow; 5:Grey; 6:Pink; 7:Orange; 8:Purple; 9:Brown"""


def _shape(g: Grid) -> str:
    return f"(grid shape: {g.h} by {g.w})"


def _task_blocks(task: Task) -> list[str]:
    blocks = []
    for k, (x, y) in enumerate(task.train_pairs, start=1):
        blocks.append(f"## Input {k} {_shape(x)}:\n{render_grid(x)}")
        blocks.append(f"## Output {k} {_shape(y)}:\n{render_grid(y)}")
    for t, x in enumerate(task.test_inputs, start=1):
        blocks.append(f"## Test Input {t} {_shape(x)}:\n{render_grid(x)}")
    return blocks


def render_task_block(task: Task) -> str:
    """The '# Task to solve:' section shared by both prompts."""
    return "# Task to solve:\n" + "\n\n".join(_task_blocks(task))


def render_few_shot_block(example_task: Task, solution_source: str) -> str:
    """One solved example mirroring the task-to-solve layout."""
    return (
        "Here is an example of a solved ARC-AGI task:\n\n# Example task:\n"
        + "\n\n".join(_task_blocks(example_task))
        + "\n\nSolution:\n```python\n"
        + solution_source
        + "\n```"
    )


def build_sampling_prompt(
    task: Task, few_shot: tuple[Task, str] | None = None
) -> list[ChatMessage]:
    """Sampling prompt: instructions, optional solved example, task to solve.

    ``few_shot`` is an ``(example task, solution source)`` pair whose solution
    must be correct for its task.
    """
    parts = [SAMPLING_PREAMBLE, "\n\n\n"]
    if few_shot is not None:
        example_task, solution_source = few_shot
        parts.append(render_few_shot_block(example_task, solution_source))
        parts.append("\n\n")
    parts.append("Now, solve the following ARC-AGI task:\n\n")
    parts.append(render_task_block(task))
    return [
        ChatMessage("system", SYSTEM_PROMPT),
        ChatMessage("user", "".join(parts)),
    ]


def _train_feedback(k: int, outcome: Outcome, correct: bool) -> str:
    if correct:
        return f"## Output {k} computed by `transform` is correct."
    head = f"## Output {k} computed by `transform` is incorrect."
    if outcome.is_ok and outcome.grid is not None:
        return (
            f"{head}\nThe execution gave the following results "
            f"{_shape(outcome.grid)}:\n{render_grid(outcome.grid)}"
        )
    return f"{head}\n{_failure_sentence(outcome)}"


def _failure_sentence(outcome: Outcome) -> str:
    if outcome.status == "timeout":
        return "The execution timed out."
    if outcome.status == "invalid":
        return f"The execution gave an invalid grid: {outcome.message}"
    return f"The execution raised an error: {outcome.message}"


def _test_feedback(t: int, outcome: Outcome) -> str:
    head = f"## Output Test {t} computed by `transform` (we don't know if it is correct or not)"
    if outcome.is_ok and outcome.grid is not None:
        return (
            f"{head} The execution gave the following results "
            f"{_shape(outcome.grid)}:\n{render_grid(outcome.grid)}"
        )
    return f"{head} {_failure_sentence(outcome)}"


def build_refinement_prompt(
    task: Task, source_text: str, evaluation: CandidateEvaluation
) -> list[ChatMessage]:
    """Repair prompt: task, previous implementation, per-pair feedback."""
    n = len(task.train_pairs)
    if len(evaluation.train_outcomes) != n:
        raise ValueError("evaluation does not match the task's train pairs")

    correct_flags = []
    for (_, target), outcome in zip(task.train_pairs, evaluation.train_outcomes):
        correct_flags.append(
            outcome.is_ok and outcome.grid is not None and grid_equal(outcome.grid, target)
        )
    n_correct = sum(correct_flags)

    feedback = [
        _train_feedback(k, outcome, flag)
        for k, (outcome, flag) in enumerate(zip(evaluation.train_outcomes, correct_flags), start=1)
    ]
    feedback.extend(
        _test_feedback(t, outcome)
        for t, outcome in enumerate(evaluation.test_outcomes, start=1)
    )

    parts = [
        REFINEMENT_PREAMBLE,
        "\n\n**Now, repair the following ARC-AGI task implementation:**\n\n",
        render_task_block(task),
        "\n\nPrevious implementation:\n```python\n",
        source_text,
        "\n```\n",
        f"This implementation of transform function correctly worked on {n_correct}/{n} "
        "train input-output pairs.\nDetailed results:\n",
        "\n".join(feedback),
    ]

    incorrect = [f"Output {k}" for k, flag in enumerate(correct_flags, start=1) if not flag]
    if incorrect:
        parts.append(
            "\n\nThe previous code give incorrect output for: "
            + ", ".join(incorrect)
            + ". Now, you need to fix the code to produce correct output for all inputs."
        )

    return [
        ChatMessage("system", SYSTEM_PROMPT),
        ChatMessage("user", "".join(parts)),
    ]


_FENCE_RE = re.compile(r"```([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)
_TRANSFORM_RE = re.compile(r"\bdef\s+transform\s*\(")


def parse_completion(text: str) -> str:
    """Extract the transform source from a model completion.

    Takes the last fenced code block (bare or python-tagged); the fix
    conventionally comes last when a completion restates broken code first.
    """
    blocks = [
        body for tag, body in _FENCE_RE.findall(text) if tag.lower() in ("", "python", "py")
    ]
    if not blocks:
        raise CompletionParseError("no_code_block", "completion has no fenced code block")
    source = blocks[-1].strip("\n")
    if not _TRANSFORM_RE.search(source):
        raise CompletionParseError(
            "no_transform_function", "code block does not define `transform`"
        )
    return source


def render_program_block(source_text: str) -> str:
    """A program as an assistant message body (fenced code block)."""
    return f"```python\n{source_text}\n```"
