"""Cold-start simulation: teams of users, implicit feedback and precision curves.

Each resource belongs to the place where it is useful (resource ``r`` maps to
the ``r mod k``-th distinct place of the daily schedule). A user accepts a
recommendation with probability ``1 - acceptance_noise`` when the resource is
in their interest set and they are at its place, and with probability
``acceptance_noise`` otherwise.

Agents only ever see situations and rewards; interest sets stay inside the
simulator.
"""

from __future__ import annotations

import datetime as dt
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import store
from .collab import Transaction
from .config import Config
from .context import Ontology, RawContext, Situation, encode
from .hyql import HYQL, VARIANTS, Agent, make_agent
from .qlearning import LearningParams

log = logging.getLogger(__name__)

# independent RNG streams derived from (seed, stream, ...)
_POPULATION, _ENV, _AGENT, _HISTORY, _DRIFT = range(5)


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


@dataclass(frozen=True)
class SimUser:
    user_id: str
    team_id: str
    interest_set: FrozenSet[int]
    situation_schedule: Tuple[RawContext, ...]
    personal_quirk: FrozenSet[int]
    resource_places: Tuple[Tuple[str, ...], ...]  # class index -> place path
    acceptance_noise: float = 0.1

    def place_of(self, resource: int) -> Tuple[str, ...]:
        return self.resource_places[resource % len(self.resource_places)]


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    variant: str
    user_id: str
    trial: int
    state_id: str
    recommended: int
    accepted: int
    source: str


@dataclass
class PrecisionCurve:
    values: List[float]
    precision: float  # whole-run


@dataclass
class ExperimentResult:
    logs: List[TrialRecord]
    curves: Dict[Tuple[int, str, str], PrecisionCurve] = field(default_factory=dict)
    q_ranges: Dict[Tuple[int, str, str], Tuple[float, float]] = field(default_factory=dict)  # final (min, max) Q


def _schedule_places(config: Config) -> List[str]:
    places: List[str] = []
    for slot in config.sim.schedule:
        if slot["place"] not in places:
            places.append(slot["place"])
    return places


def make_population(config: Config, seed: int) -> List[SimUser]:
    """Build ``n_teams`` x ``users_per_team`` users with disjoint team interest cores."""
    s = config.sim
    if s.interest_size > s.n_resources:
        raise ValueError("interest_size exceeds n_resources")
    onto = config.context.ontology()
    places = _schedule_places(config)
    k = len(places)
    place_paths = tuple(onto.abstract_location(p, "place").path for p in places)
    pools = [[r for r in range(s.n_resources) if r % k == c] for c in range(k)]
    quota = [s.interest_size // k + (c < s.interest_size % k) for c in range(k)]
    for c in range(k):
        need = s.n_teams * quota[c] + (s.quirk_size if s.quirk_size else 0)
        if need > len(pools[c]):
            raise ValueError(
                f"not enough resources for place {places[c]!r}: need {need}, have {len(pools[c])}"
            )

    rng = _stream(seed, _POPULATION)
    remaining = [list(p) for p in pools]
    users: List[SimUser] = []
    for team in range(s.n_teams):
        team_id = f"team{team}"
        core: List[int] = []
        for c in range(k):
            picked = rng.choice(remaining[c], size=quota[c], replace=False)
            core.extend(int(x) for x in picked)
            remaining[c] = [r for r in remaining[c] if r not in set(core)]
        core_set = frozenset(core)
        for m in range(s.users_per_team):
            user_id = f"{team_id}-u{m:02d}"
            interests = set(core_set)
            quirk: set = set()
            if s.quirk_size:
                dropped = rng.choice(sorted(core_set), size=s.quirk_size, replace=False)
                for r in sorted(int(x) for x in dropped):
                    c = r % k
                    options = [x for x in pools[c] if x not in core_set and x not in quirk]
                    new = int(rng.choice(options))
                    interests.discard(r)
                    interests.add(new)
                    quirk.add(new)
            schedule = _make_schedule(config, onto, team_id, rng)
            users.append(
                SimUser(user_id, team_id, frozenset(interests), schedule, frozenset(quirk),
                        place_paths, s.acceptance_noise)
            )
    return users


def _make_schedule(config: Config, onto: Ontology, team_id: str,
                   rng: np.random.Generator) -> Tuple[RawContext, ...]:
    """Weekday calendar cycling through the configured daily slots."""
    s = config.sim
    slots = s.schedule
    start = dt.datetime.fromisoformat(s.start_date).replace(tzinfo=dt.timezone.utc)
    offset = dt.timedelta(hours=config.context.utc_offset_hours)
    out = []
    day = start
    for t in range(s.n_trials + 1):
        slot = slots[t % len(slots)]
        if t and t % len(slots) == 0:
            day += dt.timedelta(days=1)
        while day.weekday() >= 5:
            day += dt.timedelta(days=1)
        jitter = int(rng.integers(0, s.jitter_minutes)) if s.jitter_minutes else 0
        local = day + dt.timedelta(hours=slot["hour"], minutes=slot.get("minute", 0) + jitter)
        out.append(
            RawContext((local - offset).timestamp(), slot["place"], team_id, slot.get("action", "none"))
        )
    return tuple(out)


def user_feedback(user: SimUser, situation: Situation, resource: int, rng: np.random.Generator) -> int:
    """Simulated accept (1) / ignore (0) of one recommended resource."""
    path = situation.location.path
    wanted = resource in user.interest_set and user.place_of(resource)[: len(path)] == path
    p_accept = 1.0 - user.acceptance_noise if wanted else user.acceptance_noise
    return int(rng.random() < p_accept)


def situation_of(config: Config, onto: Ontology, raw: RawContext) -> Situation:
    return onto.aggregate(raw, config.context.time_granularity, config.context.location_granularity)


def generate_team_history(team: Sequence[SimUser], n_events: int, seed: int,
                          config: Config) -> List[Transaction]:
    """Sample implicit-rating transactions of ``team`` visiting their own interests.

    Every event picks a member and one of their scheduled situations, then a
    resource from that member's interests wanted at that place.
    """
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    if not team:
        return []
    onto = config.context.ontology()
    rng = np.random.default_rng(seed)
    txs: List[Transaction] = []
    for k in range(n_events):
        user = team[int(rng.integers(len(team)))]
        raw = user.situation_schedule[int(rng.integers(len(user.situation_schedule)))]
        sit = situation_of(config, onto, raw)
        if not config.context.state_includes_action:
            sit = sit.without_action()
        path = sit.location.path
        wanted = sorted(r for r in user.interest_set if user.place_of(r)[: len(path)] == path)
        if not wanted:
            continue
        item = int(rng.choice(wanted))
        txs.append(Transaction(len(txs), user.user_id, item, 1.0, encode(sit), -1))
    return txs


def drift(user: SimUser, fraction: float, rng: np.random.Generator, n_resources: int) -> SimUser:
    """Replace ``fraction`` of the user's interests with fresh resources of the same place."""
    k = len(user.resource_places)
    current = sorted(user.interest_set)
    n = int(round(fraction * len(current)))
    dropped = sorted(int(x) for x in rng.choice(current, size=n, replace=False)) if n else []
    interests = set(current)
    for r in dropped:
        options = [x for x in range(n_resources) if x % k == r % k and x not in interests]
        if not options:
            continue
        interests.discard(r)
        interests.add(int(rng.choice(options)))
    return replace(user, interest_set=frozenset(interests))


def precision_curve(log: Sequence[TrialRecord], window: int) -> PrecisionCurve:
    """Accepted fraction per consecutive ``window`` trials, plus the whole-run precision."""
    n = len(log)
    if window < 1 or n % window:
        raise ValueError(f"window {window} does not divide {n} trials")
    accepted = [r.accepted for r in log]
    values = [sum(accepted[i:i + window]) / window for i in range(0, n, window)]
    return PrecisionCurve(values, sum(accepted) / n if n else 0.0)


def _targets(config: Config, population: Sequence[SimUser]) -> List[int]:
    per_team = config.sim.targets_per_team or config.sim.users_per_team
    idx = []
    for i, u in enumerate(population):
        member = int(u.user_id.rsplit("-u", 1)[1])
        if member < per_team:
            idx.append(i)
    return idx


class Run:
    """One (seed, target user, variant) run of ``n_trials`` recommendations; resumable."""

    def __init__(self, config: Config, seed: int, target: int, variant: str,
                 population: Optional[Sequence[SimUser]] = None) -> None:
        self.config = config
        self.seed = seed
        self.target = target
        self.variant = variant
        self.population = list(population) if population is not None else make_population(config, seed)
        self.user = self.population[target]
        self.onto = config.context.ontology()
        self.situations = [situation_of(config, self.onto, raw) for raw in self.user.situation_schedule]
        self.env_rng = _stream(seed, _ENV, target)
        self.trial = 0
        self.log: List[TrialRecord] = []
        self.drifted = False
        lc, cc, cb = config.learning, config.collab, config.casebase
        self.agent: Agent = make_agent(
            variant,
            self.user.user_id,
            range(config.sim.n_resources),
            {u.user_id: u.team_id for u in self.population},
            LearningParams(lc.alpha, lc.gamma, lc.epsilon, lc.p),
            _stream(seed, _AGENT, target, VARIANTS.index(variant)),
            k_users=cc.k_users,
            k_items=cc.k_items,
            rebuild_every=cc.rebuild_every,
            reuse_threshold=cb.reuse_threshold,
            success_threshold=cb.success_threshold,
            case_weights=tuple(cb.weights),
            state_includes_action=config.context.state_includes_action,
        )
        if self.agent.variant == HYQL:
            teammates = [u for u in self.population
                         if u.team_id == self.user.team_id and u.user_id != self.user.user_id]
            history_seed = int(np.random.SeedSequence([seed, _HISTORY, target]).generate_state(1)[0])
            self.agent.bootstrap_from_group(
                generate_team_history(teammates, config.sim.history_events, history_seed, config)
            )

    @property
    def done(self) -> bool:
        return self.trial >= self.config.sim.n_trials

    def _maybe_drift(self) -> None:
        s = self.config.sim
        if s.drift_trial is not None and not self.drifted and self.trial >= s.drift_trial:
            self.user = drift(self.user, s.drift_fraction, _stream(self.seed, _DRIFT, self.target), s.n_resources)
            self.drifted = True

    def advance(self, n: Optional[int] = None) -> List[TrialRecord]:
        stop = self.config.sim.n_trials if n is None else min(self.config.sim.n_trials, self.trial + n)
        while self.trial < stop:
            self._maybe_drift()
            s = self.situations[self.trial]
            action, source = self.agent.select_action(s)
            reward = user_feedback(self.user, s, action, self.env_rng)
            self.agent.step(s, reward, self.situations[self.trial + 1])
            self.log.append(TrialRecord(self.seed, self.variant, self.user.user_id, self.trial,
                                        self.agent.state_of(s), action, reward, source))
            self.trial += 1
        return self.log

    def checkpoint(self, path: Union[str, Path]) -> Path:
        extra = {
            "seed": self.seed,
            "target": self.target,
            "variant": self.variant,
            "trial": self.trial,
            "drifted": self.drifted,
            "env_rng": self.env_rng.bit_generator.state,
            "log": [list(vars(r).values()) for r in self.log],
        }
        return store.checkpoint(self.agent, path, extra)

    @classmethod
    def restore(cls, config: Config, path: Union[str, Path]) -> "Run":
        agent, extra = store.restore(path)
        run = cls.__new__(cls)
        run.config = config
        run.seed, run.target, run.variant = extra["seed"], extra["target"], extra["variant"]
        run.population = make_population(config, run.seed)
        run.user = run.population[run.target]
        run.onto = config.context.ontology()
        run.situations = [situation_of(config, run.onto, raw) for raw in run.user.situation_schedule]
        run.env_rng = _stream(run.seed, _ENV, run.target)
        run.env_rng.bit_generator.state = extra["env_rng"]
        run.trial = extra["trial"]
        run.log = [TrialRecord(*row) for row in extra["log"]]
        run.drifted = False
        if extra["drifted"]:
            run._maybe_drift()
        run.agent = agent
        return run


def _run_seed(args: Tuple[Config, int]):
    config, seed = args
    population = make_population(config, seed)
    out: List[TrialRecord] = []
    q_ranges = {}
    for target in _targets(config, population):
        for variant in config.sim.variants:
            run = Run(config, seed, target, variant, population)
            out.extend(run.advance())
            v = run.agent.qtable.values_array()
            q_ranges[(seed, variant, run.user.user_id)] = (float(v.min()), float(v.max())) if v.size else (0.0, 0.0)
    return out, q_ranges


def run_experiment(config: Config, parallelism: int = 1) -> ExperimentResult:
    """Run every (seed, target, variant) and compute per-run precision curves.

    Output order is (seed, variant, user, trial) regardless of worker completion order.
    """
    tasks = [(config, seed) for seed in config.sim.seeds]
    if parallelism > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            chunks = list(pool.map(_run_seed, tasks))
    else:
        chunks = [_run_seed(t) for t in tasks]
    order = {v: i for i, v in enumerate(config.sim.variants)}
    logs = sorted((r for c, _ in chunks for r in c),
                  key=lambda r: (r.seed, order[r.variant], r.user_id, r.trial))
    result = ExperimentResult(logs)
    for _, q in chunks:
        result.q_ranges.update(q)
    runs: Dict[Tuple[int, str, str], List[TrialRecord]] = {}
    for r in logs:
        runs.setdefault((r.seed, r.variant, r.user_id), []).append(r)
    for key, records in runs.items():
        result.curves[key] = precision_curve(records, config.sim.window)
    return result


def mean_curves(result: ExperimentResult) -> Dict[str, np.ndarray]:
    by_variant: Dict[str, List[List[float]]] = {}
    for (_, variant, _), curve in result.curves.items():
        by_variant.setdefault(variant, []).append(curve.values)
    return {v: np.mean(np.array(c), axis=0) for v, c in by_variant.items()}


def per_seed_early_precision(result: ExperimentResult, variant: str, windows: int = 5) -> Dict[int, float]:
    """Mean precision over the first ``windows`` windows, averaged over targets, per seed."""
    acc: Dict[int, List[float]] = {}
    for (seed, v, _), curve in result.curves.items():
        if v == variant:
            acc.setdefault(seed, []).append(float(np.mean(curve.values[:windows])))
    return {seed: float(np.mean(vals)) for seed, vals in sorted(acc.items())}


TRIAL_COLUMNS = ("seed", "variant", "user_id", "trial", "state_id", "recommended", "accepted", "source")
CURVE_COLUMNS = ("seed", "variant", "user_id", "window", "precision")


def dump_trials(logs: Sequence[TrialRecord]) -> str:
    return store.write_table("trials", TRIAL_COLUMNS, (tuple(vars(r).values()) for r in logs))


def load_trials(text: str, source: str = "<trials>") -> List[TrialRecord]:
    _, rows = store.read_table(text, "trials", TRIAL_COLUMNS, source)
    return store._parse_rows(
        rows, source,
        lambda c: TrialRecord(int(c[0]), c[1], c[2], int(c[3]), c[4], int(c[5]), int(c[6]), c[7]),
    )


def dump_curves(result: ExperimentResult) -> str:
    def rows():
        for (seed, variant, user), curve in result.curves.items():
            for w, v in enumerate(curve.values, start=1):
                yield seed, variant, user, w, float(v)

    return store.write_table("curves", CURVE_COLUMNS, rows())
