"""Tabular Q-learning: value table, the one-step update, greedy and epsilon-greedy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Tuple

import numpy as np

CONSTANT = "constant"
INVERSE_VISITS = "inverse-visits"


@dataclass(frozen=True)
class LearningParams:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.1
    p: float = 0.9
    alpha_schedule: str = CONSTANT

    def __post_init__(self) -> None:
        # alpha=0 is accepted so the update can be frozen in tests
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.alpha_schedule not in (CONSTANT, INVERSE_VISITS):
            raise ValueError(f"unknown alpha schedule {self.alpha_schedule!r}")


class QTable:
    """Mapping (state_id, action_id) -> value; unseen pairs read as ``default_value``.

    Actions are kept sorted so that index order equals id order, which makes
    "lowest action id" the natural argmax tie-break.
    """

    def __init__(self, actions: Iterable[int], default_value: float = 0.0) -> None:
        self.actions: Tuple[int, ...] = tuple(sorted(set(int(a) for a in actions)))
        self.default_value = float(default_value)
        self._index = {a: i for i, a in enumerate(self.actions)}
        self._rows: Dict[str, np.ndarray] = {}
        self._visits: Dict[Tuple[str, int], int] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, state: str) -> bool:
        return state in self._rows

    @property
    def states(self) -> Tuple[str, ...]:
        return tuple(self._rows)

    def row(self, state: str) -> np.ndarray:
        """Read-only view of Q(state, .) in action order."""
        r = self._rows.get(state)
        if r is None:
            r = np.full(len(self.actions), self.default_value)
        view = r.view()
        view.flags.writeable = False
        return view

    def get(self, state: str, action: int) -> float:
        r = self._rows.get(state)
        if r is None:
            return self.default_value
        return float(r[self._index[action]])

    def set(self, state: str, action: int, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError(f"Q-values must be finite, got {value}")
        r = self._rows.get(state)
        if r is None:
            r = self._rows[state] = np.full(len(self.actions), self.default_value)
        r[self._index[action]] = value

    def visits(self, state: str, action: int) -> int:
        return self._visits.get((state, action), 0)

    def set_visits(self, state: str, action: int, count: int) -> None:
        self._visits[(state, action)] = int(count)

    def items(self) -> Iterator[Tuple[str, int, float]]:
        """Stored cells in insertion order of states, action order within a state."""
        for state, r in self._rows.items():
            for a, v in zip(self.actions, r):
                yield state, a, float(v)

    def values_array(self) -> np.ndarray:
        if not self._rows:
            return np.empty(0)
        return np.concatenate(list(self._rows.values()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QTable):
            return NotImplemented
        return (
            self.actions == other.actions
            and self.default_value == other.default_value
            and self._rows.keys() == other._rows.keys()
            and all(np.array_equal(self._rows[s], other._rows[s]) for s in self._rows)
            and self._visits == other._visits
        )


def max_q(table: QTable, state: str) -> Tuple[int, float]:
    if not table.actions:
        raise ValueError("empty action space")
    r = table.row(state)
    i = int(np.argmax(r))  # first maximum == lowest action id
    return table.actions[i], float(r[i])


def update(
    table: QTable,
    s: str,
    a: int,
    r: float,
    s_next: str,
    params: LearningParams,
) -> float:
    """Apply Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)); return the new Q(s,a)."""
    if not isinstance(params, LearningParams):
        raise TypeError("params must be LearningParams")
    if not math.isfinite(r):
        raise ValueError(f"reward must be finite, got {r}")
    if a not in table._index:
        raise KeyError(f"unknown action {a}")
    n = table.visits(s, a) + 1
    table.set_visits(s, a, n)
    alpha = params.alpha if params.alpha_schedule == CONSTANT else 1.0 / n
    q_sa = table.get(s, a)
    _, v_next = max_q(table, s_next)
    new = q_sa + alpha * (r + params.gamma * v_next - q_sa)
    table.set(s, a, new)
    return new


def greedy_policy(table: QTable, state: str) -> int:
    return max_q(table, state)[0]


def epsilon_greedy_choice(
    table: QTable, state: str, epsilon: float, rng: np.random.Generator
) -> Tuple[int, bool]:
    """Return (action, explored); ``explored`` is True when the uniform branch fired."""
    if not table.actions:
        raise ValueError("empty action space")
    if rng.random() < epsilon:
        return table.actions[int(rng.integers(len(table.actions)))], True
    return greedy_policy(table, state), False


def epsilon_greedy_policy(
    table: QTable, state: str, epsilon: float, rng: np.random.Generator
) -> int:
    return epsilon_greedy_choice(table, state, epsilon, rng)[0]
