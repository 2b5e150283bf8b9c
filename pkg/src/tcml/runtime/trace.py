"""Newline-delimited JSON trace of gatherer events."""

from __future__ import annotations

import json
from typing import IO

FIELDS = ("seq", "wallNanos", "kind", "thread", "txn", "path", "extra")


class Trace:
    """Collects events in gatherer order.

    Events go to ``stream`` (one JSON object per line) and, when ``keep`` is
    set, to ``events`` as dicts.  With neither, only ``seq`` advances.
    """

    def __init__(self, stream: IO[str] | None = None, keep: bool = False) -> None:
        self.stream = stream
        self.keep = keep
        self.events: list[dict] = []
        self.seq = 0

    def emit(self, nanos: int, kind: str, thread, txn, path, extra: dict) -> None:
        self.seq += 1
        if self.stream is None and not self.keep:
            return
        ev = {
            "seq": self.seq,
            "wallNanos": int(nanos),
            "kind": kind,
            "thread": thread,
            "txn": txn,
            "path": list(path),
            "extra": extra,
        }
        if self.keep:
            self.events.append(ev)
        if self.stream is not None:
            self.stream.write(json.dumps(ev, separators=(",", ":")) + "\n")


def read_trace(stream: IO[str]) -> list[dict]:
    return [json.loads(line) for line in stream if line.strip()]
