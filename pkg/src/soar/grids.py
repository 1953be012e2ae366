"""Colored integer grids and their exact-match semantics.

Grids are immutable: cells are stored as a tuple of row tuples, validated on
construction, and every operation returns a new value.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import GridInvariantViolation

MIN_SIDE = 1
MAX_SIDE = 30
MIN_COLOR = 0
MAX_COLOR = 9


@dataclass(frozen=True)
class Grid:
    """A rectangular h x w matrix of color codes in 0..9."""

    cells: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        cells = self.cells
        if not isinstance(cells, tuple):
            raise GridInvariantViolation("cells must be a tuple of row tuples")
        h = len(cells)
        if not MIN_SIDE <= h <= MAX_SIDE:
            raise GridInvariantViolation(f"grid height {h} outside {MIN_SIDE}..{MAX_SIDE}")
        w = len(cells[0]) if cells else 0
        if not MIN_SIDE <= w <= MAX_SIDE:
            raise GridInvariantViolation(f"grid width {w} outside {MIN_SIDE}..{MAX_SIDE}")
        for row in cells:
            if not isinstance(row, tuple):
                raise GridInvariantViolation("rows must be tuples")
            if len(row) != w:
                raise GridInvariantViolation(f"ragged row: expected width {w}, got {len(row)}")
            for cell in row:
                if type(cell) is not int or not MIN_COLOR <= cell <= MAX_COLOR:
                    raise GridInvariantViolation(f"cell value {cell!r} outside {MIN_COLOR}..{MAX_COLOR}")

    @classmethod
    def from_lists(cls, rows) -> "Grid":
        """Build a validated grid from nested sequences of ints."""
        if not isinstance(rows, (list, tuple)):
            raise GridInvariantViolation("grid must be a list of rows")
        try:
            cells = tuple(tuple(row) for row in rows)
        except TypeError as exc:
            raise GridInvariantViolation(f"grid rows must be sequences: {exc}") from exc
        return cls(cells)

    @property
    def h(self) -> int:
        return len(self.cells)

    @property
    def w(self) -> int:
        return len(self.cells[0])

    def to_lists(self) -> list[list[int]]:
        return [list(row) for row in self.cells]


def grid_equal(a: Grid, b: Grid) -> bool:
    """Exact match: identical dimensions and all cells equal."""
    return a.cells == b.cells


def render_grid(g: Grid) -> str:
    """Render a grid in the bracketed prompt format.

    One row per line, cells space-separated, continuation rows prefixed by a
    single space: ``[[a b]\\n [c d]]``.
    """
    rows = [" ".join(str(c) for c in row) for row in g.cells]
    return "[[" + "]\n [".join(rows) + "]]"


def parse_rendered_grid(text: str) -> Grid:
    """Inverse of :func:`render_grid`; used to check render round-trips."""
    body = text.strip()
    if not (body.startswith("[[") and body.endswith("]]")):
        raise GridInvariantViolation("not a rendered grid")
    inner = body[1:-1]
    rows = []
    for line in inner.split("\n"):
        line = line.strip()
        if not (line.startswith("[") and line.endswith("]")):
            raise GridInvariantViolation(f"bad rendered row: {line!r}")
        rows.append([int(tok) for tok in line[1:-1].split()])
    return Grid.from_lists(rows)
