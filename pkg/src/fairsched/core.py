"""Domain types and the utility algebra shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

ROW_SUM_TOL = 1e-9


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class SizeLimitError(InvalidInputError):
    """Raised when an exact solver is asked to handle an instance that is too large."""


class ConfigurationError(ValueError):
    """Raised for malformed probability tables or generation settings."""


class DataError(ValueError):
    """Raised when a dataset or checkpoint file fails schema validation."""


class NumericError(FloatingPointError):
    """Raised when training produces a non-finite loss."""


DEFAULT_SLOT_LABELS = (
    "8:00 AM", "8:30 AM", "9:00 AM", "9:30 AM", "10:00 AM", "10:30 AM",
    "1:00 PM", "1:30 PM", "2:00 PM", "2:30 PM", "3:00 PM", "3:30 PM",
)


def _minutes(label: str) -> int:
    t = datetime.strptime(label.strip().upper(), "%I:%M %p")
    return t.hour * 60 + t.minute


@dataclass(frozen=True)
class SlotGrid:
    """Ordered court time slots split into a morning and an afternoon block.

    ``block_boundary`` is the index of the first afternoon slot.
    """

    labels: tuple[str, ...] = DEFAULT_SLOT_LABELS
    block_boundary: int = 6

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise InvalidInputError("a slot grid needs at least 2 slots")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidInputError("slot labels must be distinct")
        if not 0 <= self.block_boundary <= len(self.labels):
            raise InvalidInputError("block_boundary out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def minutes(self) -> np.ndarray:
        return np.array([_minutes(s) for s in self.labels])

    def block_of(self, slot: int) -> range:
        if slot < self.block_boundary:
            return range(0, self.block_boundary)
        return range(self.block_boundary, self.n)

    @classmethod
    def for_size(cls, n: int) -> "SlotGrid":
        """Grid of ``n`` slots taken evenly from the 12 default slots of each block.

        ``n = 12`` is the default half-hour grid; ``n = 6`` is the hourly grid.
        """
        if not 2 <= n <= 12:
            raise InvalidInputError(f"no built-in grid with {n} slots")
        morning = (n + 1) // 2
        afternoon = n - morning
        picks = [k * 6 // morning for k in range(morning)]
        picks += [6 + k * 6 // afternoon for k in range(afternoon)]
        return cls(tuple(DEFAULT_SLOT_LABELS[i] for i in picks), morning)


@dataclass(frozen=True)
class PreferenceMatrix:
    """Row-stochastic ``n x n`` matrix; row ``i`` is defendant ``i``'s slot preference."""

    values: np.ndarray

    def __post_init__(self):
        y = np.array(self.values, dtype=float)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise InvalidInputError(f"preference matrix must be square, got {y.shape}")
        if not np.all(np.isfinite(y)) or y.min() < 0.0 or y.max() > 1.0:
            raise InvalidInputError("preference entries must lie in [0, 1]")
        sums = y.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise InvalidInputError(f"row {bad} sums to {sums[bad]!r}, expected 1")
        y.setflags(write=False)
        object.__setattr__(self, "values", y)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Assignment:
    """A schedule stored as a permutation: ``perm[i]`` is the slot of defendant ``i``."""

    perm: np.ndarray

    def __post_init__(self):
        p = np.array(self.perm, dtype=np.int64).ravel()
        n = p.size
        if n == 0 or not np.array_equal(np.sort(p), np.arange(n)):
            raise InvalidInputError(f"not a permutation of 0..{n - 1}: {p.tolist()}")
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def n(self) -> int:
        return self.perm.size

    @property
    def matrix(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[np.arange(self.n), self.perm] = 1.0
        return out

    @classmethod
    def from_matrix(cls, pi) -> "Assignment":
        pi = np.asarray(pi)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise InvalidInputError("permutation matrix must be square")
        if not (np.all((pi == 0) | (pi == 1)) and np.all(pi.sum(0) == 1) and np.all(pi.sum(1) == 1)):
            raise InvalidInputError("matrix is not a permutation matrix")
        return cls(np.argmax(pi, axis=1))

    def __eq__(self, other):
        return isinstance(other, Assignment) and np.array_equal(self.perm, other.perm)

    def __hash__(self):
        return hash(self.perm.tobytes())


@dataclass(frozen=True)
class GroupPartition:
    """Partition of defendants into protected groups.

    ``group_of[i]`` is the position of defendant ``i``'s group in ``groups``.
    Build one from raw labels with :meth:`from_labels`.
    """

    group_of: np.ndarray
    groups: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        g = np.array(self.group_of, dtype=np.int64).ravel()
        n_groups = int(g.max()) + 1 if g.size else 0
        groups = tuple(np.flatnonzero(g == k) for k in range(n_groups))
        if g.size == 0 or g.min() < 0:
            raise InvalidInputError("group ids must be nonnegative and cover at least one defendant")
        if any(s.size == 0 for s in groups):
            raise InvalidInputError("every group must be nonempty")
        if self.groups:
            given = tuple(np.sort(np.asarray(s, dtype=np.int64)) for s in self.groups)
            if len(given) != len(groups) or any(not np.array_equal(a, b) for a, b in zip(given, groups)):
                raise InvalidInputError("groups are inconsistent with group_of")
        g.setflags(write=False)
        object.__setattr__(self, "group_of", g)
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return self.group_of.size

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.groups])

    def __len__(self):
        return len(self.groups)

    @classmethod
    def from_labels(cls, labels) -> "GroupPartition":
        """Relabel arbitrary group ids to ``0..m-1`` in order of first sorted id."""
        _, inverse = np.unique(np.asarray(labels), return_inverse=True)
        return cls(inverse.ravel())

    @classmethod
    def singletons(cls, n: int) -> "GroupPartition":
        return cls(np.arange(n))


def _matrix(prefs) -> np.ndarray:
    if isinstance(prefs, PreferenceMatrix):
        return prefs.values
    return np.asarray(prefs, dtype=float)


def _check_dims(assignment: Assignment, y: np.ndarray) -> None:
    if y.ndim != 2 or y.shape != (assignment.n, assignment.n):
        raise InvalidInputError(
            f"assignment of size {assignment.n} does not match preferences of shape {y.shape}"
        )


def utility_vector(assignment: Assignment, prefs) -> np.ndarray:
    """Per-defendant utility ``Y[i, perm[i]]``, i.e. ``diag(Y^T Pi)``."""
    y = _matrix(prefs)
    _check_dims(assignment, y)
    return y[np.arange(assignment.n), assignment.perm]


def total_utility(assignment: Assignment, prefs) -> float:
    return float(utility_vector(assignment, prefs).sum())


def group_utilities(assignment: Assignment, prefs, partition: GroupPartition) -> np.ndarray:
    """Mean member utility of every group, in partition order."""
    u = utility_vector(assignment, prefs)
    if partition.n != u.size:
        raise InvalidInputError("partition size does not match the assignment")
    return np.bincount(partition.group_of, weights=u, minlength=len(partition)) / partition.sizes
