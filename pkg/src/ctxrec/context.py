"""Context dimensions, ontology abstraction and situation aggregation.

Raw readings (timestamp, place, social group, cognitive action) are abstracted
into concepts of a small time vocabulary and a place -> city -> region tree,
then aggregated into a :class:`Situation` that serves as a learning state.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

HOUR = "hour"
PERIOD = "period-of-day"
DAY_TYPE = "day-type"
TIME_GRANULARITIES = (HOUR, PERIOD, DAY_TYPE)

PLACE = "place"
CITY = "city"
REGION = "region"
LOCATION_GRANULARITIES = (PLACE, CITY, REGION)

COGNITIVE_ACTIONS = ("read-document", "open-folder", "send-email", "call", "none")
DAY_TYPES = ("weekday", "weekend")

DEFAULT_PERIODS: Dict[str, Tuple[int, int]] = {
    "night": (0, 6),
    "morning": (6, 11),
    "midday": (11, 14),
    "afternoon": (14, 18),
    "evening": (18, 24),
}

DEFAULT_LOCATIONS: Dict[str, Dict[str, List[str]]] = {
    "ile-de-france": {
        "evry": ["office", "office-3", "home"],
        "paris": ["client-site", "hotel"],
    },
    "normandie": {
        "rouen": ["warehouse"],
    },
}

# characters reserved by the state-id encoding
_RESERVED = set("|=:/\t\n")


class ContextError(ValueError):
    """Raised for unknown places, unsupported granularities or bad vocabularies."""


@dataclass(frozen=True)
class RawContext:
    timestamp: float
    place_id: str
    social_group_id: str
    cognitive_action: str = "none"

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ContextError(f"timestamp must be >= 0, got {self.timestamp}")
        if self.cognitive_action not in COGNITIVE_ACTIONS:
            raise ContextError(f"unknown cognitive action {self.cognitive_action!r}")


@dataclass(frozen=True)
class TimeConcept:
    """A time label at one granularity.

    ``period`` is the period-of-day containing the concept (None at day-type
    level) and ``day_type`` the weekday/weekend qualifier of the instant it
    was abstracted from. Both feed case similarity.
    """

    granularity: str
    label: str
    period: Optional[str]
    day_type: str


@dataclass(frozen=True)
class LocationConcept:
    granularity: str
    label: str
    path: Tuple[str, ...]  # ancestors from region down to label


@dataclass(frozen=True)
class Situation:
    time: TimeConcept
    location: LocationConcept
    social_group_id: str
    cognitive_action: str = "none"

    def without_action(self) -> "Situation":
        return replace(self, cognitive_action="none")


def _check_label(label: str) -> None:
    if not label or _RESERVED & set(label):
        raise ContextError(f"invalid vocabulary label {label!r}")


class Ontology:
    """Fixed time vocabulary plus a configurable location hierarchy."""

    def __init__(
        self,
        periods: Optional[Mapping[str, Sequence[int]]] = None,
        locations: Optional[Mapping[str, Mapping[str, Sequence[str]]]] = None,
        utc_offset_hours: float = 0.0,
    ) -> None:
        periods = dict(DEFAULT_PERIODS if periods is None else periods)
        locations = DEFAULT_LOCATIONS if locations is None else locations
        self.utc_offset_hours = float(utc_offset_hours)

        self.periods: Dict[str, Tuple[int, int]] = {}
        self._hour_to_period: List[Optional[str]] = [None] * 24
        for name, bounds in periods.items():
            _check_label(name)
            lo, hi = int(bounds[0]), int(bounds[1])
            if not 0 <= lo < hi <= 24:
                raise ContextError(f"bad bounds for period {name!r}: {bounds}")
            self.periods[name] = (lo, hi)
            for h in range(lo, hi):
                if self._hour_to_period[h] is not None:
                    raise ContextError(f"hour {h} covered by two periods")
                self._hour_to_period[h] = name
        missing = [h for h, p in enumerate(self._hour_to_period) if p is None]
        if missing:
            raise ContextError(f"hours not covered by any period: {missing}")

        self._paths: Dict[str, Tuple[str, str, str]] = {}
        seen = set()
        for region, cities in locations.items():
            _check_label(region)
            for city, places in cities.items():
                _check_label(city)
                for place in places:
                    _check_label(place)
                    if place in self._paths:
                        raise ContextError(f"place {place!r} has two parents")
                    self._paths[place] = (region, city, place)
                if (CITY, city) in seen:
                    raise ContextError(f"city {city!r} has two parent regions")
                seen.add((CITY, city))

    @classmethod
    def from_dict(cls, data: Mapping) -> "Ontology":
        return cls(
            periods=data.get("time_periods"),
            locations=data.get("locations"),
            utc_offset_hours=data.get("utc_offset_hours", 0.0),
        )

    @property
    def places(self) -> List[str]:
        return sorted(self._paths)

    def period_of_hour(self, hour: int) -> str:
        return self._hour_to_period[hour]  # type: ignore[return-value]

    def _local(self, timestamp: float) -> dt.datetime:
        if timestamp < 0:
            raise ContextError(f"timestamp must be >= 0, got {timestamp}")
        tz = dt.timezone(dt.timedelta(hours=self.utc_offset_hours))
        return dt.datetime.fromtimestamp(timestamp, tz=tz)

    def abstract_time(self, timestamp: float, granularity: str) -> TimeConcept:
        local = self._local(timestamp)
        day_type = "weekend" if local.weekday() >= 5 else "weekday"
        period = self.period_of_hour(local.hour)
        if granularity == HOUR:
            return TimeConcept(HOUR, f"{local.hour:02d}", period, day_type)
        if granularity == PERIOD:
            return TimeConcept(PERIOD, period, period, day_type)
        if granularity == DAY_TYPE:
            return TimeConcept(DAY_TYPE, day_type, None, day_type)
        raise ContextError(f"unsupported time granularity {granularity!r}")

    def generalize_time(self, concept: TimeConcept, granularity: str) -> TimeConcept:
        """Map a concept to a coarser (or equal) level of the time hierarchy."""
        order = {HOUR: 0, PERIOD: 1, DAY_TYPE: 2}
        if granularity not in order:
            raise ContextError(f"unsupported time granularity {granularity!r}")
        if order[granularity] < order[concept.granularity]:
            raise ContextError(f"cannot specialize {concept.granularity} to {granularity}")
        if granularity == concept.granularity:
            return concept
        if granularity == PERIOD:
            return TimeConcept(PERIOD, concept.period, concept.period, concept.day_type)
        return TimeConcept(DAY_TYPE, concept.day_type, None, concept.day_type)

    def abstract_location(self, place_id: str, granularity: str) -> LocationConcept:
        try:
            path = self._paths[place_id]
        except KeyError:
            raise ContextError(f"unknown place {place_id!r}") from None
        depth = {REGION: 1, CITY: 2, PLACE: 3}.get(granularity)
        if depth is None:
            raise ContextError(f"unsupported location granularity {granularity!r}")
        return LocationConcept(granularity, path[depth - 1], path[:depth])

    def aggregate(
        self,
        raw: RawContext,
        time_granularity: str = PERIOD,
        location_granularity: str = PLACE,
    ) -> Situation:
        return Situation(
            time=self.abstract_time(raw.timestamp, time_granularity),
            location=self.abstract_location(raw.place_id, location_granularity),
            social_group_id=raw.social_group_id,
            cognitive_action=raw.cognitive_action,
        )

    def time_concepts(self, granularity: str) -> Iterator[TimeConcept]:
        """Enumerate every concept representable at ``granularity``."""
        for day_type in DAY_TYPES:
            if granularity == HOUR:
                for h in range(24):
                    yield TimeConcept(HOUR, f"{h:02d}", self.period_of_hour(h), day_type)
            elif granularity == PERIOD:
                for p in self.periods:
                    yield TimeConcept(PERIOD, p, p, day_type)
            elif granularity == DAY_TYPE:
                yield TimeConcept(DAY_TYPE, day_type, None, day_type)
            else:
                raise ContextError(f"unsupported time granularity {granularity!r}")

    def location_concepts(self, granularity: str) -> List[LocationConcept]:
        return sorted(
            {self.abstract_location(p, granularity) for p in self._paths},
            key=lambda c: c.path,
        )


DEFAULT_ONTOLOGY = Ontology()


def abstract_time(timestamp: float, granularity: str, ontology: Ontology = DEFAULT_ONTOLOGY) -> TimeConcept:
    return ontology.abstract_time(timestamp, granularity)


def abstract_location(place_id: str, granularity: str, ontology: Ontology = DEFAULT_ONTOLOGY) -> LocationConcept:
    return ontology.abstract_location(place_id, granularity)


def aggregate(
    raw: RawContext,
    time_granularity: str = PERIOD,
    location_granularity: str = PLACE,
    ontology: Ontology = DEFAULT_ONTOLOGY,
) -> Situation:
    return ontology.aggregate(raw, time_granularity, location_granularity)


def encode(situation: Situation) -> str:
    """Canonical, restart-stable state id. Injective over valid situations."""
    t, loc = situation.time, situation.location
    return "|".join(
        [
            f"t={t.granularity}:{t.label}:{t.period or '-'}:{t.day_type}",
            f"l={loc.granularity}:{'/'.join(loc.path)}",
            f"g={situation.social_group_id}",
            f"c={situation.cognitive_action}",
        ]
    )


def decode(state_id: str) -> Situation:
    try:
        t_part, l_part, g_part, c_part = state_id.split("|")
        assert t_part[:2] == "t=" and l_part[:2] == "l=" and g_part[:2] == "g=" and c_part[:2] == "c="
        t_gran, t_label, t_period, t_day = t_part[2:].split(":")
        l_gran, l_path = l_part[2:].split(":")
        path = tuple(l_path.split("/"))
    except (ValueError, AssertionError):
        raise ContextError(f"malformed state id {state_id!r}") from None
    return Situation(
        time=TimeConcept(t_gran, t_label, None if t_period == "-" else t_period, t_day),
        location=LocationConcept(l_gran, path[-1], path),
        social_group_id=g_part[2:],
        cognitive_action=c_part[2:],
    )
