import json
import math

import pytest
from hypothesis import given, strategies as st

from dpecdf.errors import InvalidDomainError, InvalidParameterError
from dpecdf.grid import (
    EvaluationGrid,
    all_tree_indices,
    make_explicit_grid,
    make_geometric_grid,
    make_uniform_grid,
    node_interval,
    path_indices,
    tree_depth_for,
)


def test_uniform_integer_lattice():
    g = make_uniform_grid(0, 4, 1)
    assert g.points == (0.0, 1.0, 2.0, 3.0, 4.0)
    assert (g.n_points, g.tree_depth) == (5, 3)


def test_uniform_two_points():
    g = make_uniform_grid(0, 1, 1)
    assert g.points == (0.0, 1.0)
    assert g.tree_depth == 1


def test_uniform_inserts_off_lattice_bounds():
    g = make_uniform_grid(0.1, 0.95, 0.25)
    assert g.points == pytest.approx([0.1, 0.25, 0.5, 0.75, 0.95], abs=1e-15)
    assert g.n_points == 5


def test_uniform_float_step_has_no_near_duplicates():
    g = make_uniform_grid(0.0, 1.0, 0.1)
    assert g.n_points == 11
    assert g.points[-1] == 1.0


def test_geometric_examples():
    assert make_geometric_grid(1, math.e**2, 1).points == pytest.approx([1, math.e, math.e**2], rel=1e-12)
    assert make_geometric_grid(1, 10, math.log(10)).points == pytest.approx([1, 10], rel=1e-12)
    assert make_geometric_grid(0.5, 8, math.log(2)).points == pytest.approx([0.5, 1, 2, 4, 8], rel=1e-12)


@pytest.mark.parametrize("lo,hi", [(1.0, 1.0), (2.0, 1.0)])
def test_bad_domain(lo, hi):
    with pytest.raises(InvalidDomainError):
        make_uniform_grid(lo, hi, 0.5)


@pytest.mark.parametrize("psi", [0.0, -1.0, math.inf])
def test_bad_step(psi):
    with pytest.raises(InvalidParameterError):
        make_uniform_grid(0, 1, psi)


def test_geometric_needs_positive_lo():
    with pytest.raises(InvalidDomainError):
        make_geometric_grid(0.0, 4.0, 0.5)


def test_explicit_grid_must_increase():
    with pytest.raises(InvalidDomainError):
        make_explicit_grid([0, 2, 1])
    with pytest.raises(InvalidParameterError):
        make_explicit_grid([])


def test_path_examples():
    assert path_indices(2, 3) == [(3, 0), (2, 1), (1, 2)]
    assert path_indices(0, 1) == [(1, 0)]
    assert path_indices(2, 4) == [(4, 0), (2, 1), (1, 2)]


def test_path_out_of_range():
    g = make_uniform_grid(0, 4, 1)
    with pytest.raises(IndexError):
        path_indices(g, 0)
    with pytest.raises(IndexError):
        path_indices(g, 6)


def test_virtual_padding_aliases_last_point():
    g = make_uniform_grid(0, 4, 1)  # N=5, L=3: indices 6..8 are virtual
    assert [g.tau(i) for i in (5, 6, 8)] == [4.0, 4.0, 4.0]
    with pytest.raises(IndexError):
        g.tau(9)


def test_json_round_trip():
    g = make_uniform_grid(0.1, 0.95, 0.25)
    obj = json.loads(g.to_json())
    assert set(obj) == {"lo", "hi", "kind", "psi", "points"}
    assert EvaluationGrid.from_json(g.to_json()) == g


def test_json_rejects_inconsistent_bounds():
    with pytest.raises(InvalidDomainError):
        EvaluationGrid.from_dict({"kind": "explicit", "points": [0, 1], "lo": -1})


def test_index_of_value():
    g = make_explicit_grid([1, 2, 4])
    assert [g.index_of_value(v) for v in (0, 1, 1.5, 4, 5)] == [1, 1, 2, 3, 4]


@given(st.integers(0, 10), st.data())
def test_path_structure(depth, data):
    i = data.draw(st.integers(1, 1 << depth))
    path = path_indices(depth, i)
    assert len(path) == depth + 1
    assert [l for _, l in path] == list(range(depth + 1))
    for j, l in path:
        lo, hi = node_interval(j, l)
        assert lo <= i <= hi


@given(st.integers(0, 9))
def test_full_index_set(depth):
    nodes = list(all_tree_indices(depth))
    assert len(nodes) == len(set(nodes)) == 2 ** (depth + 1) - 1
    full = set(nodes)
    for i in range(1, (1 << depth) + 1):
        assert set(path_indices(depth, i)) <= full


@given(st.integers(1, 5000))
def test_tree_depth_is_ceil_log2(n):
    assert tree_depth_for(n) == (0 if n == 1 else math.ceil(math.log2(n)))


@given(
    st.floats(-100, 100, allow_nan=False),
    st.floats(0.01, 50, allow_nan=False),
    st.floats(0.05, 5, allow_nan=False),
)
def test_uniform_grid_invariants(lo, width, psi):
    hi = lo + width
    g = make_uniform_grid(lo, hi, psi)
    assert g.points[0] == lo and g.points[-1] == hi
    assert all(b > a for a, b in zip(g.points, g.points[1:]))
    inner = g.points[1:-1]
    for p in inner:
        assert abs(p / psi - round(p / psi)) < 1e-6
