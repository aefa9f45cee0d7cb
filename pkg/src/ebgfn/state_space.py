"""Partially specified binary vectors and the actions that connect them.

A state is a length-D vector over {0, 1, void}. Internally void is stored
as -1, which is also the value the policy network sees, so ``encode`` is a
plain dtype conversion. Batched helpers work on int8 arrays of shape (B, D).

Forward actions are flattened as ``2 * position + bit`` into a vector of
length 2D; backward actions are indexed by position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

VOID = -1


class InvalidActionError(ValueError):
    pass


@dataclass(frozen=True)
class Forward:
    position: int
    value: int

    @property
    def index(self) -> int:
        return 2 * self.position + self.value

    @classmethod
    def from_index(cls, index: int) -> "Forward":
        return cls(int(index) // 2, int(index) % 2)


@dataclass(frozen=True)
class Backward:
    position: int


@dataclass(frozen=True)
class State:
    entries: tuple[int, ...]

    def __post_init__(self):
        if any(e not in (0, 1, VOID) for e in self.entries):
            raise ValueError(f"state entries must be 0, 1 or {VOID}: {self.entries}")

    @classmethod
    def initial(cls, D: int) -> "State":
        return cls((VOID,) * D)

    @classmethod
    def of(cls, values: Iterable) -> "State":
        """Build a state from ints, with ``None`` or -1 meaning void."""
        return cls(tuple(VOID if v is None else int(v) for v in values))

    @property
    def D(self) -> int:
        return len(self.entries)

    @property
    def num_set(self) -> int:
        return sum(e != VOID for e in self.entries)

    @property
    def is_terminal(self) -> bool:
        return self.num_set == self.D

    @property
    def is_initial(self) -> bool:
        return self.num_set == 0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=np.int8)

    def __str__(self) -> str:
        return "(" + ",".join("∅" if e == VOID else str(e) for e in self.entries) + ")"


def apply_forward(s: State, a: Forward) -> State:
    if s.entries[a.position] != VOID:
        raise InvalidActionError(f"position {a.position} of {s} is already set")
    if a.value not in (0, 1):
        raise InvalidActionError(f"bit must be 0 or 1, got {a.value}")
    entries = list(s.entries)
    entries[a.position] = a.value
    return State(tuple(entries))


def apply_backward(s: State, a: Backward) -> State:
    if s.entries[a.position] == VOID:
        raise InvalidActionError(f"position {a.position} of {s} is void")
    entries = list(s.entries)
    entries[a.position] = VOID
    return State(tuple(entries))


def action_masks(s: State | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Valid-action masks: forward (..., 2D) and backward (..., D)."""
    arr = s.as_array() if isinstance(s, State) else np.asarray(s)
    void = arr == VOID
    return np.repeat(void, 2, axis=-1), ~void


def encode(s: State | np.ndarray) -> np.ndarray:
    arr = s.as_array() if isinstance(s, State) else np.asarray(s)
    return arr.astype(np.float64)


def num_set(states: np.ndarray) -> np.ndarray:
    return np.count_nonzero(np.asarray(states) != VOID, axis=-1)


def apply_forward_batch(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Apply flat forward action indices row-wise; returns a new array."""
    actions = np.asarray(actions)
    pos, bit = actions // 2, actions % 2
    rows = np.arange(len(states))
    if np.any(states[rows, pos] != VOID):
        raise InvalidActionError("forward action on a position that is already set")
    out = states.copy()
    out[rows, pos] = bit
    return out


def apply_backward_batch(states: np.ndarray, positions: np.ndarray) -> np.ndarray:
    rows = np.arange(len(states))
    if np.any(states[rows, positions] == VOID):
        raise InvalidActionError("backward action on a void position")
    out = states.copy()
    out[rows, positions] = VOID
    return out


def as_state_array(states: Sequence[State] | np.ndarray) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states.astype(np.int8, copy=False)
    return np.stack([s.as_array() for s in states])
