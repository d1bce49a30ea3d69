"""Single-process realtime feature store.

Consumes an (arbitrarily ordered) action event stream, validates and
deduplicates it, keeps the most recent N actions per user, and serves
point-in-time sequence fetches. Retention keeps the top-capacity events
under a total order on (timestamp, pin_id, action_type), so the retained
set is independent of arrival order for duplicate-free streams.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, asdict

import numpy as np

from .sequence import ActionVocab, UserAction, build_sequence

SNAPSHOT_SCHEMA = "seqrank-store-snapshot"
SNAPSHOT_VERSION = 1
EVENT_SCHEMA = "seqrank-events"
EVENT_VERSION = 1


class RestoreError(ValueError):
    pass


@dataclass(frozen=True)
class ActionEvent:
    user_id: int
    pin_id: int
    action_type: int
    timestamp: int
    pin_embedding: tuple
    source_id: str = ""
    cluster_id: int = -1


@dataclass(frozen=True)
class IngestResult:
    status: str            # accept | duplicate | rejected
    reason: str = ""

    @property
    def accepted(self):
        return self.status == "accept"


ACCEPT = IngestResult("accept")
DUPLICATE = IngestResult("duplicate")


def _order_key(event):
    return (event.timestamp, event.pin_id, event.action_type)


class SequenceStore:
    """Per-user most-recent-N buffers with duplicate combining.

    Duplicates share (user, pin, action type, timestamp bucket); the first
    record seen wins and later copies are dropped. Capacity defaults to
    2x the serving sequence length so fetches at past request times stay
    accurate after newer events arrive.
    """

    def __init__(self, capacity=200, dedup_bucket_seconds=1, d_pinsage=32,
                 vocab=None):
        if capacity < 1 or dedup_bucket_seconds < 1:
            raise ValueError("capacity and dedup bucket must be >= 1")
        self.capacity = capacity
        self.dedup_bucket_seconds = dedup_bucket_seconds
        self.d_pinsage = d_pinsage
        self.vocab = vocab or ActionVocab()
        self._events = {}   # user_id -> list sorted descending by order key
        self._keys = {}     # user_id -> set of dedup keys of retained events
        self.counts = {"accept": 0, "duplicate": 0, "rejected": 0}

    def _dedup_key(self, event):
        bucket = event.timestamp // self.dedup_bucket_seconds
        return (event.pin_id, event.action_type, bucket)

    def _validate(self, event):
        if event.timestamp < 0:
            return "negative_timestamp"
        if not 0 <= event.action_type < self.vocab.n_real:
            return "unknown_action_type"
        if len(event.pin_embedding) != self.d_pinsage:
            return "embedding_width_mismatch"
        return None

    def ingest_event(self, event):
        reason = self._validate(event)
        if reason is not None:
            self.counts["rejected"] += 1
            return IngestResult("rejected", reason)
        key = self._dedup_key(event)
        keys = self._keys.setdefault(event.user_id, set())
        if key in keys:
            self.counts["duplicate"] += 1
            return DUPLICATE
        events = self._events.setdefault(event.user_id, [])
        # keep descending order: insort against the negated key
        bisect.insort(events, event, key=lambda e: (-e.timestamp, -e.pin_id,
                                                    -e.action_type))
        keys.add(key)
        while len(events) > self.capacity:
            evicted = events.pop()  # smallest (oldest) under the total order
            keys.discard(self._dedup_key(evicted))
        self.counts["accept"] += 1
        return ACCEPT

    def fetch_sequence(self, user_id, t_request, max_len=100):
        """Point-in-time sequence: retained events at or before t_request."""
        history = [UserAction(timestamp=e.timestamp, action_type=e.action_type,
                              pin_embedding=np.asarray(e.pin_embedding),
                              pin_id=e.pin_id, cluster_id=e.cluster_id)
                   for e in self._events.get(user_id, ())
                   if e.timestamp <= t_request]
        return build_sequence(history, t_request, max_len)

    def snapshot(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({
                "schema": SNAPSHOT_SCHEMA, "version": SNAPSHOT_VERSION,
                "capacity": self.capacity,
                "dedup_bucket_seconds": self.dedup_bucket_seconds,
                "d_pinsage": self.d_pinsage,
            }) + "\n")
            for user_id in sorted(self._events):
                block = {"user_id": user_id,
                         "events": [asdict(e) for e in self._events[user_id]]}
                fh.write(json.dumps(block) + "\n")

    @classmethod
    def restore(cls, path, vocab=None):
        with open(path) as fh:
            try:
                header = json.loads(fh.readline())
            except (json.JSONDecodeError, ValueError) as err:
                raise RestoreError(f"corrupt snapshot header: {err}") from err
            if (header.get("schema") != SNAPSHOT_SCHEMA
                    or header.get("version") != SNAPSHOT_VERSION):
                raise RestoreError(
                    f"snapshot schema mismatch: {header.get('schema')} "
                    f"v{header.get('version')}")
            store = cls(capacity=header["capacity"],
                        dedup_bucket_seconds=header["dedup_bucket_seconds"],
                        d_pinsage=header["d_pinsage"], vocab=vocab)
            for line in fh:
                block = json.loads(line)
                user_id = block["user_id"]
                events = [ActionEvent(**{**e, "pin_embedding": tuple(e["pin_embedding"])})
                          for e in block["events"]]
                store._events[user_id] = events
                store._keys[user_id] = {store._dedup_key(e) for e in events}
        return store


def write_events(path, events):
    """Line-delimited event replay file with a schema version header."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": EVENT_SCHEMA, "version": EVENT_VERSION}) + "\n")
        for e in events:
            fh.write(json.dumps(asdict(e)) + "\n")


def read_events(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != EVENT_SCHEMA or header.get("version") != EVENT_VERSION:
            raise RestoreError(f"event file schema mismatch: {header}")
        for line in fh:
            rec = json.loads(line)
            rec["pin_embedding"] = tuple(rec["pin_embedding"])
            yield ActionEvent(**rec)


def replay(path, store):
    """Ingest every event in a replay file; returns ingest counters."""
    for event in read_events(path):
        store.ingest_event(event)
    return dict(store.counts)
