import pytest
from hypothesis import given
from hypothesis import strategies as st

from soar.errors import GridInvariantViolation
from soar.grids import Grid, grid_equal, parse_rendered_grid, render_grid

grids = st.integers(1, 8).flatmap(
    lambda w: st.lists(
        st.lists(st.integers(0, 9), min_size=w, max_size=w), min_size=1, max_size=8
    )
)


def test_valid_grid_dimensions():
    g = Grid.from_lists([[1, 2, 3], [4, 5, 6]])
    assert (g.h, g.w) == (2, 3)
    assert g.to_lists() == [[1, 2, 3], [4, 5, 6]]


@pytest.mark.parametrize(
    "rows",
    [
        [[12]],  # cell outside 0..9
        [[-1]],
        [[1, 2], [3]],  # ragged
        [],
        [[0] * 31],  # too wide
        [[0]] * 31,  # too tall
        [[1.5]],  # non-integer cell
    ],
)
def test_invariant_violations(rows):
    with pytest.raises(GridInvariantViolation):
        Grid.from_lists(rows)


def test_render_grid_paper_example():
    g = Grid.from_lists([[3, 3, 8], [3, 7, 0], [5, 0, 0]])
    assert render_grid(g) == "[[3 3 8]\n [3 7 0]\n [5 0 0]]"


def test_render_grid_single_cell():
    assert render_grid(Grid.from_lists([[7]])) == "[[7]]"


def test_render_grid_refinement_example():
    g = Grid.from_lists([[0, 7, 7], [7, 7, 7], [0, 7, 7]])
    assert render_grid(g) == "[[0 7 7]\n [7 7 7]\n [0 7 7]]"


def test_grid_equal_reflexive():
    g = Grid.from_lists([[1, 2], [3, 4]])
    assert grid_equal(g, g)


def test_grid_equal_dimension_mismatch():
    a = Grid.from_lists([[1, 2], [3, 4]])
    b = Grid.from_lists([[1, 2, 0], [3, 4, 0]])
    assert not grid_equal(a, b)


def test_grid_equal_cell_mismatch():
    assert not grid_equal(Grid.from_lists([[1, 2]]), Grid.from_lists([[1, 3]]))


@given(grids)
def test_render_round_trip(rows):
    g = Grid.from_lists(rows)
    assert grid_equal(parse_rendered_grid(render_grid(g)), g)


def test_grid_is_immutable_value():
    g = Grid.from_lists([[1, 2]])
    with pytest.raises(AttributeError):
        g.cells = ((0,),)
    lists = g.to_lists()
    lists[0][0] = 9
    assert g.cells == ((1, 2),)
