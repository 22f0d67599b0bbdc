"""Case-based reasoning over (situation, action, outcome) cases."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, Optional, Tuple

from .context import LocationConcept, Situation, TimeConcept, encode

DEFAULT_WEIGHTS = (0.25, 0.25, 0.25, 0.25)  # time, location, group, cognitive action


@dataclass
class Case:
    situation: Situation
    action: int
    successes: int = 0
    attempts: int = 0
    last_trial: int = -1

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts


def time_similarity(a: TimeConcept, b: TimeConcept) -> float:
    if a == b:
        return 1.0
    if a.day_type == b.day_type:
        return 0.5
    if a.period is not None and a.period == b.period:
        return 0.5
    return 0.0


def location_similarity(a: LocationConcept, b: LocationConcept) -> float:
    if a == b:
        return 1.0
    common = 0
    for x, y in zip(a.path, b.path):
        if x != y:
            break
        common += 1
    # deepest common ancestor: place/city -> 0.5, region -> 0.25
    return {0: 0.0, 1: 0.25}.get(common, 0.5)


@lru_cache(maxsize=65536)
def _similarity(s1: Situation, s2: Situation, weights: Tuple[float, float, float, float]) -> float:
    w_t, w_l, w_g, w_c = weights
    total = (
        w_t * time_similarity(s1.time, s2.time)
        + w_l * location_similarity(s1.location, s2.location)
        + w_g * float(s1.social_group_id == s2.social_group_id)
        + w_c * float(s1.cognitive_action == s2.cognitive_action)
    )
    return total / (w_t + w_l + w_g + w_c)


def case_similarity(
    s1: Situation, s2: Situation, weights: Tuple[float, float, float, float] = DEFAULT_WEIGHTS
) -> float:
    """Weighted mean of per-dimension similarities, in [0, 1]."""
    if s1 == s2:
        return 1.0
    # order-independent cache key keeps the function exactly symmetric
    a, b = sorted((s1, s2), key=encode)
    return _similarity(a, b, tuple(weights))


@dataclass
class CaseBase:
    reuse_threshold: float = 0.75
    success_threshold: float = 0.5
    weights: Tuple[float, float, float, float] = DEFAULT_WEIGHTS
    cases: Dict[Tuple[str, int], Case] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("reuse_threshold", "success_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        self.weights = tuple(float(w) for w in self.weights)  # type: ignore[assignment]
        if len(self.weights) != 4 or min(self.weights) < 0 or sum(self.weights) <= 0:
            raise ValueError(f"weights must be 4 non-negative numbers with positive sum, got {self.weights}")

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self) -> Iterator[Case]:
        return iter(self.cases.values())

    def add(self, case: Case) -> None:
        if case.attempts < 1 or not 0 <= case.successes <= case.attempts:
            raise ValueError(f"invalid case counters {case.successes}/{case.attempts}")
        self.cases[(encode(case.situation), case.action)] = case


def retrieve(base: CaseBase, situation: Situation) -> Optional[Tuple[Case, float]]:
    """Most similar reusable case, or None.

    Only cases with success rate >= ``success_threshold`` compete; the winner
    must reach ``reuse_threshold``. Ties: most recent ``last_trial``, then
    lowest action id.
    """
    best: Optional[Case] = None
    best_key = None
    for case in base.cases.values():
        if case.success_rate < base.success_threshold:
            continue
        sim = case_similarity(situation, case.situation, base.weights)
        key = (sim, case.last_trial, -case.action)
        if best_key is None or key > best_key:
            best, best_key = case, key
    if best is None or best_key[0] < base.reuse_threshold:
        return None
    return best, best_key[0]


def adapt(case: Case, current: Situation) -> int:
    # resources are available in every situation, so the stored action carries over
    return case.action


def retain(base: CaseBase, situation: Situation, action: int, reward: int, trial: int = -1) -> CaseBase:
    if reward not in (0, 1):
        raise ValueError(f"reward must be 0 or 1, got {reward!r}")
    key = (encode(situation), action)
    case = base.cases.get(key)
    if case is None:
        case = base.cases[key] = Case(situation, action)
    case.attempts += 1
    case.successes += reward
    case.last_trial = trial
    return base
