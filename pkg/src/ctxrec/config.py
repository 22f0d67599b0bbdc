"""Experiment configuration: nested dataclasses loaded from YAML.

Unknown keys are rejected with the dotted path of the offending key so the
CLI can report it. ``section.key=value`` overrides are parsed as YAML scalars.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import yaml

from .context import (
    DEFAULT_LOCATIONS,
    DEFAULT_PERIODS,
    LOCATION_GRANULARITIES,
    TIME_GRANULARITIES,
    COGNITIVE_ACTIONS,
    ContextError,
    Ontology,
)

CONFIG_ENV = "CTXREC_CONFIG"
DEFAULT_CONFIG_PATH = Path(__file__).with_name("data") / "default.yaml"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ContextConfig:
    utc_offset_hours: float = 0.0
    time_periods: Dict[str, List[int]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_PERIODS.items()}
    )
    locations: Dict[str, Dict[str, List[str]]] = field(
        default_factory=lambda: {r: {c: list(p) for c, p in cs.items()} for r, cs in DEFAULT_LOCATIONS.items()}
    )
    time_granularity: str = "period-of-day"
    location_granularity: str = "place"
    state_includes_action: bool = False

    def ontology(self) -> Ontology:
        return Ontology(self.time_periods, self.locations, self.utc_offset_hours)


@dataclass
class LearningConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.1
    p: float = 0.9


@dataclass
class CollabConfig:
    k_users: int = 5
    k_items: int = 10
    rebuild_every: int = 10


@dataclass
class CaseBaseConfig:
    reuse_threshold: float = 0.75
    success_threshold: float = 0.5
    weights: List[float] = field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])


def _default_schedule() -> List[Dict[str, Any]]:
    return [
        {"hour": 9, "minute": 30, "place": "office", "action": "read-document"},
        {"hour": 12, "minute": 0, "place": "client-site", "action": "call"},
        {"hour": 15, "minute": 0, "place": "office", "action": "send-email"},
    ]


@dataclass
class SimConfig:
    n_teams: int = 2
    users_per_team: int = 10
    n_resources: int = 100
    n_trials: int = 100
    window: int = 10
    acceptance_noise: float = 0.1
    interest_size: int = 10
    quirk_size: int = 2
    history_events: int = 200
    targets_per_team: Optional[int] = None  # None = every user is a target once
    seeds: List[int] = field(default_factory=lambda: list(range(30)))
    variants: List[str] = field(default_factory=lambda: ["qlearning", "hyql"])
    start_date: str = "2012-01-02"
    jitter_minutes: int = 20
    schedule: List[Dict[str, Any]] = field(default_factory=_default_schedule)
    drift_trial: Optional[int] = None
    drift_fraction: float = 0.5


@dataclass
class Config:
    context: ContextConfig = field(default_factory=ContextConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    collab: CollabConfig = field(default_factory=CollabConfig)
    casebase: CaseBaseConfig = field(default_factory=CaseBaseConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> "Config":
        c, s, lp = self.context, self.sim, self.learning
        if c.time_granularity not in TIME_GRANULARITIES:
            raise ConfigError("context.time_granularity", f"unsupported {c.time_granularity!r}")
        if c.location_granularity not in LOCATION_GRANULARITIES:
            raise ConfigError("context.location_granularity", f"unsupported {c.location_granularity!r}")
        try:
            onto = c.ontology()
        except ContextError as exc:
            raise ConfigError("context", str(exc)) from None
        if not 0 < lp.alpha <= 1:
            raise ConfigError("learning.alpha", "must lie in (0, 1]")
        if not 0 <= lp.gamma < 1:
            raise ConfigError("learning.gamma", "must lie in [0, 1)")
        for k in ("epsilon", "p"):
            if not 0 <= getattr(lp, k) <= 1:
                raise ConfigError(f"learning.{k}", "must lie in [0, 1]")
        for k in ("k_users", "k_items", "rebuild_every"):
            if getattr(self.collab, k) < 1:
                raise ConfigError(f"collab.{k}", "must be >= 1")
        for k in ("reuse_threshold", "success_threshold"):
            if not 0 <= getattr(self.casebase, k) <= 1:
                raise ConfigError(f"casebase.{k}", "must lie in [0, 1]")
        if len(self.casebase.weights) != 4 or min(self.casebase.weights) < 0:
            raise ConfigError("casebase.weights", "need 4 non-negative weights")
        for k in ("n_teams", "users_per_team", "n_resources", "n_trials", "window", "interest_size"):
            if getattr(s, k) < 1:
                raise ConfigError(f"sim.{k}", "must be >= 1")
        if s.n_trials % s.window:
            raise ConfigError("sim.window", f"must divide n_trials={s.n_trials}")
        if s.interest_size > s.n_resources:
            raise ConfigError("sim.interest_size", "exceeds n_resources")
        if not 0 <= s.acceptance_noise <= 1:
            raise ConfigError("sim.acceptance_noise", "must lie in [0, 1]")
        if not 0 <= s.quirk_size <= s.interest_size:
            raise ConfigError("sim.quirk_size", "must lie in [0, interest_size]")
        if s.history_events < 0:
            raise ConfigError("sim.history_events", "must be >= 0")
        if s.targets_per_team is not None and not 1 <= s.targets_per_team <= s.users_per_team:
            raise ConfigError("sim.targets_per_team", "must lie in [1, users_per_team]")
        if not s.seeds:
            raise ConfigError("sim.seeds", "at least one seed required")
        from .hyql import VARIANTS

        for v in s.variants:
            if v not in VARIANTS:
                raise ConfigError("sim.variants", f"unknown variant {v!r}; choose from {VARIANTS}")
        if not s.schedule:
            raise ConfigError("sim.schedule", "empty schedule")
        for i, slot in enumerate(s.schedule):
            key = f"sim.schedule[{i}]"
            if set(slot) - {"hour", "minute", "place", "action"} or "hour" not in slot or "place" not in slot:
                raise ConfigError(key, "slots need hour, place and optional minute, action")
            if slot["place"] not in onto.places:
                raise ConfigError(key + ".place", f"unknown place {slot['place']!r}")
            if not 0 <= slot["hour"] < 24 or not 0 <= slot.get("minute", 0) + s.jitter_minutes <= 60:
                raise ConfigError(key, "hour/minute (+jitter) out of range")
            if slot.get("action", "none") not in COGNITIVE_ACTIONS:
                raise ConfigError(key + ".action", f"unknown action {slot['action']!r}")
        if s.drift_trial is not None and not 0 <= s.drift_trial < s.n_trials:
            raise ConfigError("sim.drift_trial", "must lie in [0, n_trials)")
        if not 0 <= s.drift_fraction <= 1:
            raise ConfigError("sim.drift_fraction", "must lie in [0, 1]")
        return self


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, Mapping):
        raise ConfigError(prefix or "<root>", f"expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in fields:
            raise ConfigError(path, "unknown key")
        ftype = fields[key].type
        sub = _SECTIONS.get(key) if cls is Config else None
        kwargs[key] = _build(sub, value, path) if sub else _coerce(value, fields[key], path)
    return cls(**kwargs)


def _coerce(value: Any, f: dataclasses.Field, path: str) -> Any:
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and value != int(value):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return type(default)(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {value!r}")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {value!r}")
    return value


_SECTIONS = {
    "context": ContextConfig,
    "learning": LearningConfig,
    "collab": CollabConfig,
    "casebase": CaseBaseConfig,
    "sim": SimConfig,
}


def from_dict(data: Optional[Mapping[str, Any]]) -> Config:
    cfg = _build(Config, data or {}, "")
    return cfg.validate()


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``a.b=value`` overrides to a raw config mapping (values parsed as YAML)."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(item, "override must look like section.key=value")
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot override inside a non-mapping")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def read_raw(path: Union[str, Path, None]) -> Dict[str, Any]:
    """Load a YAML (or JSON) config mapping; a run manifest's ``config`` block is accepted too."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or DEFAULT_CONFIG_PATH
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config file must contain a mapping")
    if data.get("format") == "ctxrec-run-manifest":
        data = data["config"]
    return data


def load(path: Union[str, Path, None] = None, overrides: Sequence[str] = ()) -> Config:
    return from_dict(apply_overrides(read_raw(path), overrides))
