import numpy as np
import pytest

from ratrack.assignment import match_by_affinity, solve_min_cost

from oracles import brute_force_min_cost


def _check_partition(m, n_rows, n_cols):
    rows = [r for r, _ in m.pairs]
    cols = [c for _, c in m.pairs]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert sorted(rows + m.unmatched_rows) == list(range(n_rows))
    assert sorted(cols + m.unmatched_cols) == list(range(n_cols))


def test_single_entry():
    m = solve_min_cost([[0.0]])
    assert m.pairs == [(0, 0)]
    assert m.total(np.array([[0.0]])) == 0


def test_two_by_two():
    c = np.array([[1.0, 2.0], [2.0, 1.0]])
    m = solve_min_cost(c)
    assert sorted(m.pairs) == [(0, 0), (1, 1)]
    assert m.total(c) == 2


def test_three_by_three():
    c = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]], dtype=float)
    m = solve_min_cost(c)
    assert sorted(m.pairs) == [(0, 1), (1, 0), (2, 2)]
    assert m.total(c) == 5 == brute_force_min_cost(c)


def test_empty_and_rectangular():
    m = solve_min_cost(np.zeros((0, 3)))
    assert m.pairs == [] and m.unmatched_cols == [0, 1, 2]
    c = np.array([[5.0], [1.0], [3.0]])
    m = solve_min_cost(c)
    assert m.pairs == [(1, 0)]
    _check_partition(m, 3, 1)


def test_rejects_nan():
    with pytest.raises(ValueError):
        solve_min_cost([[np.nan, 1.0]])


def test_tie_breaking_is_index_ordered():
    m = solve_min_cost(np.zeros((2, 2)))
    assert m.pairs == [(0, 0), (1, 1)]
    assert solve_min_cost(np.zeros((2, 2))).pairs == m.pairs


@pytest.mark.parametrize("seed", range(5))
def test_optimality_against_enumeration(seed):
    rng = np.random.default_rng(seed)
    for _ in range(60):
        n, m = rng.integers(1, 7, size=2)
        cost = rng.integers(-5, 10, size=(n, m)).astype(float)
        res = solve_min_cost(cost)
        _check_partition(res, n, m)
        assert len(res.pairs) == min(n, m)
        assert res.total(cost) == brute_force_min_cost(cost)


def test_match_by_affinity_examples():
    assert match_by_affinity([[1.0]], 0.5).pairs == [(0, 0)]
    m = match_by_affinity([[0.3]], 0.5)
    assert m.pairs == [] and m.unmatched_rows == [0] and m.unmatched_cols == [0]
    m = match_by_affinity([[0.9, 0.0], [0.0, 0.2]], 0.5)
    assert m.pairs == [(0, 0)]
    assert m.unmatched_rows == [1] and m.unmatched_cols == [1]


def test_zero_gate_drops_zero_affinity():
    m = match_by_affinity([[0.0, 0.4]], 0.0)
    assert m.pairs == [(0, 1)]
    m = match_by_affinity([[0.0]], 0.0)
    assert m.pairs == []


def test_gate_monotone():
    rng = np.random.default_rng(11)
    for _ in range(50):
        aff = rng.uniform(size=(4, 5))
        prev = None
        for gate in (0.0, 0.2, 0.4, 0.6, 0.8):
            pairs = set(match_by_affinity(aff, gate).pairs)
            if prev is not None:
                assert pairs <= prev
            prev = pairs
