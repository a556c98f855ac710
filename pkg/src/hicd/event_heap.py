"""Unstructured, TTL-bounded shared event memory.

All middleware components coordinate through this heap: anyone may post a
typed event, anyone eligible may read it while it lives.  Events carry an
optional target set; a targeted event is invisible to every component not
named in it.  Retrieval is oldest-first by the sequence number assigned at
post time.

Time is a logical clock owned by the heap and advanced only through
expire(); the daemon maps it to wall time, tests drive it by hand.  An
event is live iff now < posted_at + ttl.

Thread-safe: every operation is atomic under one lock, and subscription
queues are plain queue.Queue instances safe to hand to another thread.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field

from .errors import ClockRegression, InvalidEvent, UnknownSubscription

Scalar = str | int | bool


@dataclass(frozen=True)
class Event:
    """A typed field-bag on the heap.

    `targets` empty means visible to all.  `posted_at` and `seq` are
    assigned by the heap at post time.
    """

    event_type: str
    fields: dict[str, Scalar] = field(default_factory=dict)
    source: str = ""
    targets: frozenset[str] = frozenset()
    ttl: float = 60.0
    posted_at: float = 0.0
    seq: int = 0

    def visible_to(self, consumer: str) -> bool:
        return not self.targets or consumer in self.targets

    def to_dict(self) -> dict:
        return {
            "event_type": self.event_type,
            "fields": dict(self.fields),
            "source": self.source,
            "targets": sorted(self.targets),
            "ttl": self.ttl,
            "posted_at": self.posted_at,
            "seq": self.seq,
        }


@dataclass(frozen=True)
class EventTemplate:
    """Equality-subset matcher: type (when given) and every constrained
    field must be present and equal."""

    event_type: str | None = None
    field_constraints: dict[str, Scalar] = field(default_factory=dict)

    def matches(self, event: Event) -> bool:
        if self.event_type is not None and self.event_type != event.event_type:
            return False
        for key, want in self.field_constraints.items():
            if key not in event.fields or event.fields[key] != want:
                return False
        return True


@dataclass
class _Subscription:
    sub_id: str
    consumer: str
    template: EventTemplate
    deliveries: queue.Queue


class EventHeap:
    """The shared event memory with post/consume/subscribe/expire."""

    def __init__(self):
        self._lock = threading.Lock()
        self._events: list[Event] = []  # kept in seq order
        self._subs: dict[str, _Subscription] = {}
        self._now = 0.0
        self._next_seq = 1
        self._next_sub = 1
        self._journal: list[dict] = []

    @property
    def now(self) -> float:
        with self._lock:
            return self._now

    def post(self, event: Event) -> int:
        """Stamp seq and posted_at, store, and push to matching subscribers.

        Returns the assigned seq.  Raises InvalidEvent on empty type or
        non-positive ttl.
        """
        if not event.event_type:
            raise InvalidEvent("event_type must be non-empty")
        if not event.ttl > 0:
            raise InvalidEvent(f"ttl must be > 0, got {event.ttl}")
        with self._lock:
            stamped = Event(
                event_type=event.event_type,
                fields=dict(event.fields),
                source=event.source,
                targets=frozenset(event.targets),
                ttl=event.ttl,
                posted_at=self._now,
                seq=self._next_seq,
            )
            self._next_seq += 1
            self._events.append(stamped)
            self._journal.append(stamped.to_dict())
            for sub in self._subs.values():
                if stamped.visible_to(sub.consumer) and sub.template.matches(stamped):
                    sub.deliveries.put(stamped)
            return stamped.seq

    def consume(self, consumer: str, template: EventTemplate,
                destructive: bool = True) -> Event | None:
        """Oldest live, eligible, matching event; None when nothing matches.

        Destructive mode removes the returned event, snoop leaves the heap
        untouched.
        """
        with self._lock:
            for i, ev in enumerate(self._events):
                if not self._live(ev):
                    continue
                if ev.visible_to(consumer) and template.matches(ev):
                    if destructive:
                        del self._events[i]
                    return ev
            return None

    def subscribe(self, consumer: str, template: EventTemplate) -> tuple[str, queue.Queue]:
        """Deliver every eligible matching event posted from now on, in seq
        order, exactly once, to the returned queue."""
        with self._lock:
            sub_id = f"sub-{self._next_sub}"
            self._next_sub += 1
            sub = _Subscription(sub_id, consumer, template, queue.Queue())
            self._subs[sub_id] = sub
            return sub_id, sub.deliveries

    def unsubscribe(self, sub_id: str) -> None:
        with self._lock:
            if sub_id not in self._subs:
                raise UnknownSubscription(sub_id)
            del self._subs[sub_id]

    def expire(self, now: float) -> int:
        """Advance the clock and drop every event whose ttl has elapsed
        (posted_at + ttl <= now).  Returns the removal count."""
        with self._lock:
            if now < self._now:
                raise ClockRegression(f"clock moved from {self._now} to {now}")
            self._now = now
            before = len(self._events)
            self._events = [ev for ev in self._events if self._live(ev)]
            return before - len(self._events)

    def journal(self) -> list[dict]:
        """Append-only log of every post, for the trace viewer.

        Observability hook only: it bypasses target visibility, which
        consume/subscribe always enforce.
        """
        with self._lock:
            return [dict(entry) for entry in self._journal]

    def journal_json(self) -> str:
        return json.dumps(self.journal(), sort_keys=True)

    def _live(self, ev: Event) -> bool:
        return self._now < ev.posted_at + ev.ttl
