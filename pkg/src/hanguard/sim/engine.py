"""Deterministic discrete-event core: virtual clock, event queue, link model."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable


class EventKind(Enum):
    PACKET_ARRIVAL = "PacketArrival"
    CONTROL_DELIVERY = "ControlDelivery"
    POLL_TICK = "PollTick"
    FLOW_ACTION = "FlowAction"
    TIMER_FIRE = "TimerFire"


@dataclass(order=True)
class SimEvent:
    at: int
    seq: int
    kind: EventKind = field(compare=False)
    action: Callable[..., Any] = field(compare=False)
    args: tuple = field(default=(), compare=False)


class Simulator:
    """Events run in ``(at, seq)`` order; ``seq`` is fixed when scheduling."""

    def __init__(self):
        self.now = 0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self.processed = 0

    def at(self, when: int, kind: EventKind, action: Callable[..., Any], *args) -> SimEvent:
        if when < self.now:
            raise ValueError(f"cannot schedule in the past ({when} < {self.now})")
        ev = SimEvent(int(when), next(self._seq), kind, action, args)
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay: int, kind: EventKind, action: Callable[..., Any], *args) -> SimEvent:
        return self.at(self.now + delay, kind, action, *args)

    def __len__(self) -> int:
        return len(self._queue)

    def run(self, until: int | None = None, stop: Callable[[], bool] | None = None) -> None:
        while self._queue:
            if until is not None and self._queue[0].at > until:
                self.now = until
                return
            ev = heapq.heappop(self._queue)
            self.now = ev.at
            ev.action(*ev.args)
            self.processed += 1
            if stop is not None and stop():
                return


@dataclass(frozen=True)
class LinkModel:
    """Fixed latency plus uniform jitter in ``[-jitter, +jitter]`` microseconds.

    Each draw is keyed, so the same (seed, key) always gives the same
    latency no matter how many other draws happened first.
    """

    name: str
    base_us: int
    jitter_us: int = 0
    seed: int = 0

    def sample(self, *key) -> int:
        if self.jitter_us == 0:
            return self.base_us
        rng = random.Random(f"{self.seed}|{self.name}|{'|'.join(map(str, key))}")
        return max(0, self.base_us + rng.randint(-self.jitter_us, self.jitter_us))
