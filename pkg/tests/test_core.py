import numpy as np
import pytest

from fairsched.core import (
    Assignment,
    GroupPartition,
    InvalidInputError,
    PreferenceMatrix,
    SlotGrid,
    group_utilities,
    total_utility,
    utility_vector,
)


def test_default_grid_has_two_blocks_of_six():
    grid = SlotGrid()
    assert grid.n == 12
    assert grid.minutes[0] == 8 * 60 and grid.minutes[-1] == 15 * 60 + 30
    assert list(grid.block_of(2)) == list(range(6))
    assert list(grid.block_of(9)) == list(range(6, 12))


@pytest.mark.parametrize("n", range(2, 13))
def test_subgrids_are_ordered_and_split(n):
    grid = SlotGrid.for_size(n)
    assert grid.n == n
    assert np.all(np.diff(grid.minutes) > 0)
    assert len(grid.block_of(0)) + len(grid.block_of(n - 1)) == n


def test_preference_matrix_validation():
    PreferenceMatrix(np.eye(3))
    with pytest.raises(InvalidInputError):
        PreferenceMatrix(np.ones((2, 3)) / 3)
    with pytest.raises(InvalidInputError):
        PreferenceMatrix(np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(InvalidInputError):
        PreferenceMatrix(np.array([[1.5, -0.5], [0.5, 0.5]]))


def test_assignment_round_trip_and_validation():
    a = Assignment([2, 0, 1])
    assert Assignment.from_matrix(a.matrix) == a
    assert a.matrix.sum(axis=0).tolist() == [1, 1, 1]
    with pytest.raises(InvalidInputError):
        Assignment([0, 0, 1])


def test_group_partition_from_labels():
    p = GroupPartition.from_labels(["b", "a", "b", "c"])
    assert len(p) == 3
    assert p.sizes.tolist() == [1, 2, 1]
    assert len(GroupPartition.singletons(5)) == 5
    with pytest.raises(InvalidInputError):
        GroupPartition(np.array([0, 2]))


def test_utilities():
    y = np.array([[0.6, 0.4, 0.0], [0.0, 0.3, 0.7], [0.1, 0.1, 0.8]])
    a = Assignment([0, 2, 1])
    assert np.allclose(utility_vector(a, y), [0.6, 0.7, 0.1])
    assert total_utility(a, y) == pytest.approx(1.4)
    p = GroupPartition.from_labels([0, 0, 1])
    assert np.allclose(group_utilities(a, y, p), [0.65, 0.1])
    with pytest.raises(InvalidInputError):
        utility_vector(Assignment([0, 1]), y)
