"""Topic-addressed in-process message bus with ordered delivery.

Topics are slash-separated; subscriptions match exact topics, a single
level with '+', or any suffix with a trailing '#'.  Every message gets a
per-sender monotonic sequence number and all deliveries share one fixed
latency, so per-sender publish order is preserved end to end.  The bus
keeps a log of every message in publish order for protocol-trace
inspection.  An external broker could replace this class behind the same
publish/subscribe surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .engine import Engine

DEFAULT_LATENCY_S = 1e-3


@dataclass(frozen=True)
class BusMessage:
    topic: str
    sender: str
    kind: str
    correlation_id: str = ""
    payload: dict = field(default_factory=dict)
    seq: int = 0
    t: float = 0.0  # publish time, simulated seconds


def topic_matches(pattern: str, topic: str) -> bool:
    pparts = pattern.split("/")
    tparts = topic.split("/")
    for i, p in enumerate(pparts):
        if p == "#":
            return True
        if i >= len(tparts):
            return False
        if p != "+" and p != tparts[i]:
            return False
    return len(pparts) == len(tparts)


class Bus:
    def __init__(self, engine: Engine, latency_s: float = DEFAULT_LATENCY_S):
        self.engine = engine
        self.latency_s = latency_s
        self._subs: list[tuple[str, Callable[[BusMessage], None]]] = []
        self._sender_seq: dict[str, int] = {}
        self.log: list[BusMessage] = []

    def subscribe(self, pattern: str, handler: Callable[[BusMessage], None]) -> None:
        self._subs.append((pattern, handler))

    def publish(self, topic: str, sender: str, kind: str,
                correlation_id: str = "", payload: dict | None = None) -> BusMessage:
        seq = self._sender_seq.get(sender, 0) + 1
        self._sender_seq[sender] = seq
        message = BusMessage(topic=topic, sender=sender, kind=kind,
                             correlation_id=correlation_id,
                             payload=payload or {}, seq=seq, t=self.engine.now)
        self.log.append(message)
        self.engine.schedule(self.latency_s, lambda: self._deliver(message),
                             kind="BusDeliver", target=topic)
        return message

    def _deliver(self, message: BusMessage) -> None:
        # Snapshot so handlers subscribing mid-delivery see only later messages.
        for pattern, handler in list(self._subs):
            if topic_matches(pattern, message.topic):
                handler(message)

    def kinds(self, correlation_id: str | None = None) -> list[str]:
        """Message-kind sequence of the log, optionally for one request."""
        return [m.kind for m in self.log
                if correlation_id is None or m.correlation_id == correlation_id]
