"""Event-log ingestion: parsing, chronological/user splits, and example building.

Raw logs are lists of (timestamp, user, item, event type) rows.  The
pipeline splits them chronologically into a part used to train item
embeddings and a later part used to train and evaluate the session model;
the latter is turned into (view sequence -> add-to-cart label) examples
which are then split by user so that no user leaks across train/eval.
"""

from __future__ import annotations

import bisect
import csv
import enum
import hashlib
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import DegenerateSplit, EmptyInput, UnknownFormat, UnreadableStream

log = logging.getLogger(__name__)

MAX_SEQ_LEN = 100


class EventType(enum.Enum):
    View = "view"
    AddToCart = "addtocart"


_EVENT_ALIASES = {
    "view": EventType.View,
    "addtocart": EventType.AddToCart,
    "add_to_cart": EventType.AddToCart,
}


@dataclass(frozen=True)
class EventRecord:
    timestamp: int
    user_id: str
    item_id: str
    event_type: EventType

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if not self.item_id:
            raise ValueError("empty item_id")
        if not isinstance(self.event_type, EventType):
            raise ValueError(f"bad event type {self.event_type!r}")


@dataclass(frozen=True)
class Preset:
    """Column mapping for a known log layout."""

    name: str
    columns: dict  # canonical field -> column name in the file
    ignored_events: frozenset = frozenset()


GENERIC = Preset(
    "generic-csv",
    {"timestamp": "timestamp", "user_id": "user_id", "item_id": "item_id", "event_type": "event_type"},
)
RETAILROCKET = Preset(
    "retailrocket",
    {"timestamp": "timestamp", "user_id": "visitorid", "item_id": "itemid", "event_type": "event"},
    ignored_events=frozenset({"transaction"}),
)
PRESETS = {"generic-csv": GENERIC, "synth": GENERIC, "retailrocket": RETAILROCKET}


class ParseResult(NamedTuple):
    records: list
    n_malformed: int
    n_ignored: int = 0


def _row_to_record(row: dict, preset: Preset):
    """Return an EventRecord, the string "ignored", or None when malformed."""
    cols = preset.columns
    try:
        raw_type = str(row[cols["event_type"]]).strip().lower()
        if raw_type in preset.ignored_events:
            return "ignored"
        etype = _EVENT_ALIASES.get(raw_type)
        if etype is None:
            return None
        ts = row[cols["timestamp"]]
        if isinstance(ts, str):
            ts = ts.strip()
        if isinstance(ts, float) or isinstance(ts, bool):
            return None
        ts = int(ts)
        user = str(row[cols["user_id"]]).strip()
        item = str(row[cols["item_id"]]).strip()
        if not user:
            return None
        return EventRecord(ts, user, item, etype)
    except (KeyError, TypeError, ValueError):
        return None


def parse_events(stream, format: str = "csv", preset: str | Preset = "generic-csv") -> ParseResult:
    """Parse a CSV or JSONL event log from a binary stream (or raw bytes).

    Rows with an unknown event type, a bad timestamp or a missing field are
    skipped and counted in ``n_malformed``.  Event types a preset declares
    as ignorable (RetailRocket ``transaction``) are counted separately.
    """
    if isinstance(preset, str):
        try:
            preset = PRESETS[preset]
        except KeyError:
            raise UnknownFormat(f"unknown preset {preset!r}") from None
    fmt = format.lower()
    if fmt not in ("csv", "jsonl"):
        raise UnknownFormat(f"unknown format {format!r}")
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    try:
        text = stream.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    except (OSError, UnicodeDecodeError, AttributeError) as exc:
        raise UnreadableStream(str(exc)) from exc

    records, n_bad, n_ignored = [], 0, 0
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            raise EmptyInput("no header row")
        header = [h.strip() for h in header]
        missing = [c for c in preset.columns.values() if c not in header]
        if missing:
            raise UnknownFormat(f"header lacks columns {missing} for preset {preset.name!r}")
        for fields in reader:
            if not fields:
                continue
            if len(fields) != len(header):
                n_bad += 1
                continue
            rec = _row_to_record(dict(zip(header, fields)), preset)
            if rec is None:
                n_bad += 1
            elif rec == "ignored":
                n_ignored += 1
            else:
                records.append(rec)
    else:
        for line in text.splitlines():
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                n_bad += 1
                continue
            rec = _row_to_record(row, preset) if isinstance(row, dict) else None
            if rec is None:
                n_bad += 1
            elif rec == "ignored":
                n_ignored += 1
            else:
                records.append(rec)

    if n_bad:
        log.warning("skipped %d malformed rows", n_bad)
    if not records:
        raise EmptyInput("no valid event records")
    return ParseResult(records, n_bad, n_ignored)


def read_events(path, preset: str | Preset = "generic-csv", format: str | None = None) -> ParseResult:
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise UnreadableStream(str(exc)) from exc
    with fh:
        return parse_events(fh, format, preset)


def write_events_csv(path, events: Iterable[EventRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "user_id", "item_id", "event_type"])
        for e in events:
            w.writerow([e.timestamp, e.user_id, e.item_id, e.event_type.value])


# --------------------------------------------------------------------------
# catalog and examples


class Catalog:
    """Bijection between item strings and dense indices ``0..n_items-1``."""

    def __init__(self, items: Sequence[str]):
        self.items = tuple(items)
        self.id_map = {s: i for i, s in enumerate(self.items)}
        if len(self.id_map) != len(self.items):
            raise ValueError("duplicate item ids in catalog")

    @property
    def n_items(self) -> int:
        return len(self.items)

    def __len__(self):
        return len(self.items)

    def __contains__(self, item_id) -> bool:
        return item_id in self.id_map

    def index(self, item_id: str) -> int:
        return self.id_map[item_id]

    def item(self, index: int) -> str:
        return self.items[index]

    def __eq__(self, other):
        return isinstance(other, Catalog) and self.items == other.items

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.items), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Catalog":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass(frozen=True)
class SplitSpec:
    w2v_fraction: float = 0.5
    train_fraction: float = 0.8

    def __post_init__(self):
        for name in ("w2v_fraction", "train_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True)
class TrainingExample:
    input_seq: tuple
    label: int
    user_id: str
    timestamp: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"user_id": self.user_id, "timestamp": self.timestamp,
             "input_seq": list(self.input_seq), "label": self.label},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TrainingExample":
        d = json.loads(line)
        return cls(tuple(d["input_seq"]), d["label"], d["user_id"], d.get("timestamp", 0))


def chronological_split(events: Sequence[EventRecord], spec: SplitSpec = SplitSpec()):
    """Split events by time into (embedding part, model part).

    The cut sits after roughly ``w2v_fraction`` of the events; every event
    sharing the timestamp at the cut goes to the earlier part.
    """
    if not events:
        raise EmptyInput("no events to split")
    ordered = sorted(events, key=lambda e: e.timestamp)
    k = min(max(int(round(spec.w2v_fraction * len(ordered))), 1), len(ordered))
    t_cut = ordered[k - 1].timestamp
    while k < len(ordered) and ordered[k].timestamp == t_cut:
        k += 1
    embed, model = ordered[:k], ordered[k:]
    if not embed or not model:
        raise DegenerateSplit(f"chronological split leaves a side empty (cut at t={t_cut})")
    return embed, model


def _user_unit(user_id: str, seed: int) -> float:
    h = hashlib.blake2b(f"{seed}\x00{user_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") / 2.0**64


def split_by_user(examples: Sequence[TrainingExample], train_fraction: float = 0.8, seed: int = 0):
    """Assign each user wholly to train or eval via a seeded hash of the user id."""
    if not examples:
        raise EmptyInput("no examples to split")
    train, evl = [], []
    for ex in examples:
        (train if _user_unit(ex.user_id, seed) < train_fraction else evl).append(ex)
    if not train or not evl:
        raise DegenerateSplit(f"user split left a side empty ({len(train)} train, {len(evl)} eval)")
    return train, evl


def _by_user(events: Iterable[EventRecord]) -> dict:
    users: dict = {}
    for e in events:
        users.setdefault(e.user_id, []).append(e)
    for evs in users.values():
        evs.sort(key=lambda e: e.timestamp)
    return users


def view_sequences(events: Iterable[EventRecord]) -> list:
    """Per-user time-ordered lists of viewed item strings."""
    return [
        [e.item_id for e in evs if e.event_type is EventType.View]
        for evs in _by_user(events).values()
    ]


def build_catalog(sequences: Iterable[Sequence[str]], min_count: int = 1) -> Catalog:
    """Catalog of items with at least ``min_count`` occurrences, in first-seen order."""
    counts: Counter = Counter()
    order: dict = {}
    for seq in sequences:
        for s in seq:
            counts[s] += 1
            order.setdefault(s, len(order))
    return Catalog([s for s in order if counts[s] >= min_count])


def build_examples(events: Iterable[EventRecord], catalog: Catalog, max_len: int = MAX_SEQ_LEN) -> list:
    """One example per add-to-cart event with at least one earlier in-catalog view.

    The input is the user's views strictly before the label, restricted to
    catalog items and truncated to the most recent ``max_len``.  Add-to-cart
    events whose item is outside the catalog are dropped.
    """
    out = []
    n_unknown_label = n_no_views = 0
    for user, evs in _by_user(events).items():
        view_ts: list = []
        view_idx: list = []
        for e in evs:
            if e.event_type is EventType.View:
                idx = catalog.id_map.get(e.item_id)
                if idx is not None:
                    view_ts.append(e.timestamp)
                    view_idx.append(idx)
                continue
            label = catalog.id_map.get(e.item_id)
            if label is None:
                n_unknown_label += 1
                continue
            end = bisect.bisect_left(view_ts, e.timestamp)
            if end == 0:
                n_no_views += 1
                continue
            seq = tuple(view_idx[max(0, end - max_len):end])
            out.append(TrainingExample(seq, label, user, e.timestamp))
    log.info(
        "built %d examples (%d labels outside catalog, %d without prior views)",
        len(out), n_unknown_label, n_no_views,
    )
    return out


def write_examples(path, examples: Iterable[TrainingExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")


def read_examples(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [TrainingExample.from_json(line) for line in fh if line.strip()]
