"""Append-only event log shared by the scheduler, redistribution and CLI.

Records follow the JSON-lines trace format::

    {"t": s, "rank": int, "worker": int, "event": str, "task": int|null,
     "peer": int|null, "phase": str|null, "bytes": int|null}

Steal events additionally carry ``i_q`` and ``tau_s``.
"""

from __future__ import annotations

import json
import threading
import time

_current = threading.local()


def current_worker() -> int | None:
    return getattr(_current, "worker", None)


def set_current_worker(worker_id: int | None) -> None:
    _current.worker = worker_id


class EventLog:
    def __init__(self, clock=time.monotonic):
        self._clock = clock
        self._lock = threading.Lock()
        self.records: list[dict] = []

    def emit(self, event: str, *, rank=None, worker=None, task=None, peer=None,
             phase=None, nbytes=None, **extra) -> dict:
        rec = {
            "t": self._clock(),
            "rank": rank,
            "worker": current_worker() if worker is None else worker,
            "event": event,
            "task": task,
            "peer": peer,
            "phase": phase,
            "bytes": nbytes,
        }
        rec.update(extra)
        with self._lock:
            self.records.append(rec)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(list(self.records))

    def select(self, event=None, **match) -> list[dict]:
        out = []
        for r in self:
            if event is not None and r["event"] != event:
                continue
            if all(r.get(k) == v for k, v in match.items()):
                out.append(r)
        return out

    def clear(self) -> None:
        with self._lock:
            self.records.clear()

    def write_jsonl(self, fp) -> None:
        for r in self:
            fp.write(json.dumps(r) + "\n")


class NullLog(EventLog):
    """Drops everything; keeps hot loops cheap when no trace is wanted."""

    def emit(self, event, **kw):
        return None
