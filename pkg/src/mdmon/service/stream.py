"""Server-Sent Events fan-out.

Every subscriber gets its own queue; event ids are log sequence numbers,
so a reconnecting client replays the persisted log from Last-Event-ID and
then switches to live delivery without gaps.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class StreamEvent:
    lsn: int
    type: str        # reading | assessment | alert | link_state
    payload: dict


def sse_format(event: StreamEvent) -> str:
    data = json.dumps(event.payload, separators=(",", ":"))
    return f"id: {event.lsn}\nevent: {event.type}\ndata: {data}\n\n"


class StreamBroker:
    def __init__(self, max_queue: int = 10_000):
        self._subscribers: list[queue.Queue] = []
        self._lock = threading.Lock()
        self.max_queue = max_queue

    def publish(self, event: StreamEvent) -> None:
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            try:
                q.put_nowait(event)
            except queue.Full:
                pass  # a stalled client drops events; replay covers it on reconnect

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=self.max_queue)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subscribers)
