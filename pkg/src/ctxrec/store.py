"""Flat-file persistence.

Two families of files live here:

* versioned tab-separated tables (Q-table, case base, transactions, trial logs)
  framed by a ``#ctxrec-<kind> v1`` header and an ``#end <rows>`` footer so
  truncation is detected;
* the recommender database (users, devices, preferences, action and event
  history) as append-only newline-delimited JSON, one file per table.

Agent checkpoints combine the tables with a JSON manifest in one directory.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import hyql
from .casebase import Case, CaseBase
from .collab import RatingMatrix, Transaction
from .context import LocationConcept, Situation, TimeConcept
from .qlearning import LearningParams, QTable

FORMAT_VERSION = 1


class StoreError(ValueError):
    """Malformed, truncated or schema-violating persisted data."""


# -- framed TSV tables -------------------------------------------------------


def write_table(kind: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                meta: Optional[Dict[str, str]] = None) -> str:
    lines = [f"#ctxrec-{kind} v{FORMAT_VERSION}"]
    for k, v in (meta or {}).items():
        lines.append(f"#{k}\t{v}")
    lines.append("\t".join(columns))
    n = 0
    for row in rows:
        cells = [repr(c) if isinstance(c, float) else str(c) for c in row]
        if any("\t" in c or "\n" in c for c in cells):
            raise StoreError(f"cell contains a delimiter: {cells}")
        lines.append("\t".join(cells))
        n += 1
    lines.append(f"#end\t{n}")
    return "\n".join(lines) + "\n"


def read_table(text: str, kind: str, columns: Sequence[str],
               source: str = "<table>") -> Tuple[Dict[str, str], List[Tuple[int, List[str]]]]:
    """Parse a framed table; errors carry ``source:line`` positions."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = f"#ctxrec-{kind} v{FORMAT_VERSION}"
    if not lines or lines[0] != header:
        raise StoreError(f"{source}:1: expected header {header!r}")
    meta: Dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#") and not lines[i].startswith("#end"):
        key, _, value = lines[i][1:].partition("\t")
        meta[key] = value
        i += 1
    if i >= len(lines) or lines[i].split("\t") != list(columns):
        raise StoreError(f"{source}:{i + 1}: expected column header {list(columns)}")
    body_start = i + 1
    footer = lines[-1].split("\t") if len(lines) > body_start else []
    if not footer or footer[0] != "#end":
        raise StoreError(f"{source}:{len(lines)}: missing end marker (truncated file?)")
    body = lines[body_start:-1]
    if len(footer) != 2 or footer[1] != str(len(body)):
        raise StoreError(f"{source}:{len(lines)}: footer row count {footer[1:]} != {len(body)} rows")
    rows = []
    for lineno, line in enumerate(body, start=body_start + 1):
        cells = line.split("\t")
        if len(cells) != len(columns):
            raise StoreError(f"{source}:{lineno}: expected {len(columns)} fields, got {len(cells)}")
        rows.append((lineno, cells))
    return meta, rows


def _parse_rows(rows: List[Tuple[int, List[str]]], source: str, parse) -> list:
    out = []
    for lineno, cells in rows:
        try:
            out.append(parse(cells))
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreError(f"{source}:{lineno}: {exc}") from None
    return out


QTABLE_COLUMNS = ("state_id", "action_id", "value", "visits")


def dump_qtable(table: QTable) -> str:
    def rows():
        for state in sorted(table.states):
            for a, v in zip(table.actions, table.row(state)):
                yield state, a, float(v), table.visits(state, a)

    meta = {
        "default_value": repr(table.default_value),
        "actions": ",".join(str(a) for a in table.actions),
    }
    return write_table("qtable", QTABLE_COLUMNS, rows(), meta)


def load_qtable(text: str, source: str = "<qtable>") -> QTable:
    meta, rows = read_table(text, "qtable", QTABLE_COLUMNS, source)
    try:
        actions = [int(a) for a in meta["actions"].split(",")] if meta.get("actions") else []
        table = QTable(actions, float(meta["default_value"]))
    except (KeyError, ValueError) as exc:
        raise StoreError(f"{source}: bad qtable preamble: {exc}") from None

    def parse(cells):
        state, a, v, n = cells[0], int(cells[1]), float(cells[2]), int(cells[3])
        table.set(state, a, v)
        if n:
            table.set_visits(state, a, n)

    _parse_rows(rows, source, parse)
    return table


CASE_COLUMNS = (
    "time_granularity", "time_label", "period", "day_type",
    "location_granularity", "location_path", "social_group_id", "cognitive_action",
    "action", "successes", "attempts", "last_trial",
)


def dump_cases(base: CaseBase) -> str:
    def rows():
        for key in sorted(base.cases):
            c = base.cases[key]
            s = c.situation
            yield (
                s.time.granularity, s.time.label, s.time.period or "-", s.time.day_type,
                s.location.granularity, "/".join(s.location.path), s.social_group_id,
                s.cognitive_action, c.action, c.successes, c.attempts, c.last_trial,
            )

    meta = {
        "reuse_threshold": repr(base.reuse_threshold),
        "success_threshold": repr(base.success_threshold),
        "weights": ",".join(repr(w) for w in base.weights),
    }
    return write_table("cases", CASE_COLUMNS, rows(), meta)


def load_cases(text: str, source: str = "<cases>") -> CaseBase:
    meta, rows = read_table(text, "cases", CASE_COLUMNS, source)
    try:
        base = CaseBase(
            float(meta["reuse_threshold"]),
            float(meta["success_threshold"]),
            tuple(float(w) for w in meta["weights"].split(",")),
        )
    except (KeyError, ValueError) as exc:
        raise StoreError(f"{source}: bad case base preamble: {exc}") from None

    def parse(c):
        path = tuple(c[5].split("/"))
        situation = Situation(
            TimeConcept(c[0], c[1], None if c[2] == "-" else c[2], c[3]),
            LocationConcept(c[4], path[-1], path),
            c[6],
            c[7],
        )
        base.add(Case(situation, int(c[8]), int(c[9]), int(c[10]), int(c[11])))

    _parse_rows(rows, source, parse)
    return base


TRANSACTION_COLUMNS = ("id", "user", "item", "rating", "state_id", "trial")


def dump_transactions(transactions: Iterable[Transaction]) -> str:
    rows = ((t.id, t.user, t.item, float(t.rating), t.state_id, t.trial) for t in transactions)
    return write_table("transactions", TRANSACTION_COLUMNS, rows)


def load_transactions(text: str, source: str = "<transactions>") -> List[Transaction]:
    _, rows = read_table(text, "transactions", TRANSACTION_COLUMNS, source)
    return _parse_rows(
        rows, source,
        lambda c: Transaction(int(c[0]), c[1], int(c[2]), float(c[3]), c[4], int(c[5])),
    )


# -- agent checkpoints ------------------------------------------------------


def _agent_manifest(agent: "hyql.Agent") -> Dict[str, Any]:
    group_of = agent.ratings.group_of if agent.ratings is not None else {}
    m: Dict[str, Any] = {
        "variant": agent.variant,
        "user_id": agent.user_id,
        "params": asdict(agent.params),
        "k_users": agent.k_users,
        "k_items": agent.k_items,
        "rebuild_every": agent.rebuild_every,
        "state_includes_action": agent.state_includes_action,
        "trial": agent.trial,
        "pending": list(agent.pending) if agent.pending else None,
        "snapshot_len": agent.snapshot_len,
        "rng": agent.rng.bit_generator.state,
        "rng_kind": type(agent.rng.bit_generator).__name__,
        "users": list(agent.ratings.users) if agent.ratings is not None else [],
        "group_of": dict(sorted(group_of.items())),
    }
    return m


def checkpoint(agent: "hyql.Agent", path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write ``agent`` (plus optional JSON-able ``extra``) to directory ``path`` atomically."""
    path = Path(path)
    files = {
        "manifest.json": json.dumps(
            {"format": "ctxrec-checkpoint", "version": FORMAT_VERSION,
             "agent": _agent_manifest(agent), "extra": extra or {}},
            sort_keys=True, indent=1,
        ) + "\n",
        "qtable.tsv": dump_qtable(agent.qtable),
    }
    if agent.variant == hyql.HYQL:
        files["cases.tsv"] = dump_cases(agent.casebase)
        files["transactions.tsv"] = dump_transactions(agent.ratings.transactions)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=path.name + ".", dir=path.parent))
    try:
        for name, text in files.items():
            with open(tmp / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
        if path.exists():
            old = path.with_name(path.name + ".old")
            shutil.rmtree(old, ignore_errors=True)
            path.rename(old)
            tmp.rename(path)
            shutil.rmtree(old)
        else:
            tmp.rename(path)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return path


def restore(path: Union[str, Path]) -> Tuple["hyql.Agent", Dict[str, Any]]:
    """Rebuild an agent from a checkpoint directory; returns (agent, extra).

    Everything is parsed and validated before the agent is constructed, so a
    corrupt checkpoint never yields a partially restored agent.
    """
    path = Path(path)

    def read(name: str) -> str:
        try:
            return (path / name).read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreError(f"{path / name}: cannot read checkpoint file: {exc}") from None

    raw = read("manifest.json")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise StoreError(f"{path / 'manifest.json'}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if doc.get("format") != "ctxrec-checkpoint" or doc.get("version") != FORMAT_VERSION:
        raise StoreError(f"{path / 'manifest.json'}: not a version {FORMAT_VERSION} checkpoint")
    m = doc["agent"]
    qtable = load_qtable(read("qtable.tsv"), str(path / "qtable.tsv"))
    cases = txs = None
    if m["variant"] == hyql.HYQL:
        cases = load_cases(read("cases.tsv"), str(path / "cases.tsv"))
        txs = load_transactions(read("transactions.tsv"), str(path / "transactions.tsv"))

    try:
        bitgen = getattr(np.random, m["rng_kind"])()
        bitgen.state = m["rng"]
        group_of = m["group_of"] or {m["user_id"]: "-"}
        agent = hyql.Agent(
            m["variant"], m["user_id"], qtable.actions, group_of,
            LearningParams(**m["params"]), np.random.Generator(bitgen),
            k_users=m["k_users"], k_items=m["k_items"], rebuild_every=m["rebuild_every"],
            state_includes_action=m["state_includes_action"], default_value=qtable.default_value,
        )
        agent.qtable = qtable
        agent.trial = m["trial"]
        agent.pending = tuple(m["pending"]) if m["pending"] else None
        if cases is not None:
            agent.casebase = cases
            agent.ratings = RatingMatrix(m["users"], qtable.actions, group_of, txs)
            agent.snapshot_len = m["snapshot_len"]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise StoreError(f"{path / 'manifest.json'}: invalid agent manifest: {exc}") from None
    return agent, doc.get("extra", {})


# -- recommender database ---------------------------------------------------

ACTION_SOURCES = (hyql.CBR_REUSE, hyql.EXPLOIT, hyql.EXPLORE_CF, hyql.EXPLORE_RANDOM)


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    social_group_id: str


@dataclass(frozen=True)
class DeviceRecord:
    user_id: str
    screen_class: str = "phone"
    capabilities: Tuple[str, ...] = ()


@dataclass(frozen=True)
class PreferenceRecord:
    user_id: str
    action_id: int
    reward: int
    trial: int
    state_id: str


@dataclass(frozen=True)
class HistoryRecord:
    kind: str  # "action" | "event"
    user_id: str
    timestamp: float
    payload: Dict[str, Any] = field(default_factory=dict)


Record = Union[UserRecord, DeviceRecord, PreferenceRecord, HistoryRecord]

TABLES = ("users", "devices", "preferences", "action_history", "event_history")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise StoreError(msg)


def _is_str(x: Any) -> bool:
    return isinstance(x, str) and x != ""


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(record: Record) -> str:
    """Check a record's schema and return the table it belongs to."""
    if isinstance(record, UserRecord):
        _require(_is_str(record.user_id) and _is_str(record.social_group_id), f"bad user record {record}")
        return "users"
    if isinstance(record, DeviceRecord):
        _require(_is_str(record.user_id) and _is_str(record.screen_class), f"bad device record {record}")
        _require(all(_is_str(c) for c in record.capabilities), "capabilities must be strings")
        return "devices"
    if isinstance(record, PreferenceRecord):
        _require(_is_str(record.user_id) and _is_int(record.action_id), f"bad preference record {record}")
        _require(record.reward in (0, 1) and _is_int(record.reward), f"reward must be 0 or 1, got {record.reward!r}")
        _require(_is_int(record.trial) and _is_str(record.state_id), f"bad preference record {record}")
        return "preferences"
    if isinstance(record, HistoryRecord):
        _require(_is_str(record.user_id) and _is_num(record.timestamp) and record.timestamp >= 0,
                 f"bad history record {record}")
        p = record.payload
        _require(isinstance(p, dict), "payload must be a mapping")
        if record.kind == "action":
            _require(set(p) == {"resource", "source", "reward"}, f"action payload keys {sorted(p)}")
            _require(_is_int(p["resource"]), "action payload: resource must be an int")
            _require(p["source"] in ACTION_SOURCES, f"action payload: unknown source {p['source']!r}")
            _require(p["reward"] in (0, 1) and _is_int(p["reward"]), "action payload: reward must be 0 or 1")
            return "action_history"
        if record.kind == "event":
            _require({"title", "start", "end"} <= set(p) <= {"title", "start", "end", "place"},
                     f"event payload keys {sorted(p)}")
            _require(_is_str(p["title"]) and _is_num(p["start"]) and _is_num(p["end"]),
                     "event payload: title/start/end types")
            _require(p["start"] <= p["end"], "event payload: start after end")
            return "event_history"
        raise StoreError(f"unknown history kind {record.kind!r}")
    raise StoreError(f"unsupported record type {type(record).__name__}")


_RECORD_TYPES = {
    "users": UserRecord,
    "devices": DeviceRecord,
    "preferences": PreferenceRecord,
    "action_history": HistoryRecord,
    "event_history": HistoryRecord,
}


class Store:
    """Append-only recommender database in a directory of NDJSON files."""

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._user_ids = {r.user_id for r in self.scan("users")}

    def _file(self, table: str) -> Path:
        return self.root / f"{table}.ndjson"

    def append(self, record: Record) -> None:
        table = validate(record)
        if table == "users":
            _require(record.user_id not in self._user_ids, f"duplicate user id {record.user_id!r}")
        line = json.dumps(asdict(record), sort_keys=True) + "\n"
        f = self._file(table)
        fresh = not f.exists()
        with open(f, "a", encoding="utf-8") as fh:
            if fresh:
                fh.write(json.dumps({"format": "ctxrec-store", "table": table,
                                     "version": FORMAT_VERSION}) + "\n")
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        if table == "users":
            self._user_ids.add(record.user_id)

    def scan(self, table: str, user_id: Optional[str] = None) -> List[Record]:
        if table not in TABLES:
            raise StoreError(f"unknown table {table!r}")
        f = self._file(table)
        if not f.exists():
            return []
        out: List[Record] = []
        cls = _RECORD_TYPES[table]
        with open(f, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise StoreError(f"{f}:{lineno}:{exc.colno}: {exc.msg}") from None
                if lineno == 1:
                    _require(doc.get("table") == table and doc.get("version") == FORMAT_VERSION,
                             f"{f}:1: bad header {doc}")
                    continue
                if cls is DeviceRecord:
                    doc["capabilities"] = tuple(doc.get("capabilities", ()))
                try:
                    rec = cls(**doc)
                except TypeError as exc:
                    raise StoreError(f"{f}:{lineno}: {exc}") from None
                if user_id is None or rec.user_id == user_id:
                    out.append(rec)
        return out
