"""
Trace events: the deterministic, line-oriented record of a run.

One event per line::

    t=<tick> <Kind> key1=value1 key2="value with spaces"

Keys are sorted; values that contain whitespace, quotes, ``=`` or are empty
are written as JSON strings. ``parse_trace(format_trace(events)) == events``.
"""

import hashlib
import json
import logging
import re
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .exceptions import InvariantViolation, MalformedTrace
from .values import Location, format_value, is_value

logger = logging.getLogger(__name__)


class TraceKind(str, Enum):
    CERT_ISSUED = "CertIssued"
    PROPOSAL_CREATED = "ProposalCreated"
    VOTE_CAST = "VoteCast"
    COMPOSITION_FINALIZED = "CompositionFinalized"
    COMPOSITION_REJECTED = "CompositionRejected"
    SECRET_ROTATED = "SecretRotated"
    MEMBER_CHANGED = "MemberChanged"
    COMPOSITION_MERGED = "CompositionMerged"
    MEDIATOR_SELECTED = "MediatorSelected"
    COLLABORATION_LINKED = "CollaborationLinked"
    SENSATION_EMITTED = "SensationEmitted"
    SENSATION_DELIVERED = "SensationDelivered"
    SHARED_WRITE = "SharedWrite"
    STATE_SNAPSHOT = "StateSnapshot"
    TRIGGER_FIRED = "TriggerFired"
    TRIGGER_DEFERRED = "TriggerDeferred"
    ROLE_BOUND = "RoleBound"
    ACTION_EXECUTED = "ActionExecuted"
    ACTION_TIMED_OUT = "ActionTimedOut"
    INSTANCE_SUSPENDED = "InstanceSuspended"
    INSTANCE_RESUMED = "InstanceResumed"
    INSTANCE_COMPLETED = "InstanceCompleted"
    INSTANCE_ABORTED = "InstanceAborted"
    LINK_CHANGED = "LinkChanged"
    MAV_DEPLOYED = "MAVDeployed"
    MESSAGE_DELIVERED = "MessageDelivered"
    MESSAGE_DROPPED = "MessageDropped"


_BARE_VALUE = re.compile(r'^[^\s"=]+$')
_LINE = re.compile(r"^t=(\d+) (\w+)((?: [\w.]+=(?:\"(?:[^\"\\]|\\.)*\"|[^\s\"]+))*)$")
_PAIR = re.compile(r' ([\w.]+)=("(?:[^"\\]|\\.)*"|[^\s"]+)')


def _to_text(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (list, tuple, set, frozenset)) and not isinstance(value, Location):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return ",".join(_to_text(item) for item in items)
    if is_value(value):
        return format_value(value)
    return str(value)


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    kind: TraceKind
    attributes: Mapping[str, str] = field(default_factory=dict)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.attributes.get(key, default)

    def matches(self, kind: str, attributes: Mapping[str, str]) -> bool:
        if self.kind.value != kind:
            return False
        return all(self.attributes.get(key) == value for key, value in attributes.items())

    def to_line(self) -> str:
        parts = [f"t={self.tick}", self.kind.value]
        for key in sorted(self.attributes):
            value = self.attributes[key]
            text = value if value and _BARE_VALUE.match(value) else json.dumps(value)
            parts.append(f"{key}={text}")
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        match = _LINE.match(line)
        if not match:
            raise MalformedTrace(f"Unparseable trace line: {line!r}")
        tick, kind, rest = match.groups()
        try:
            trace_kind = TraceKind(kind)
        except ValueError as exc:
            raise MalformedTrace(f"Unknown trace kind '{kind}'") from exc
        attributes = {}
        for key, raw in _PAIR.findall(rest):
            attributes[key] = json.loads(raw) if raw.startswith('"') else raw
        return cls(int(tick), trace_kind, attributes)


def format_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(event.to_line() + "\n" for event in events)


def parse_trace(text: str) -> list[TraceEvent]:
    events = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(TraceEvent.from_line(line))
        except MalformedTrace as exc:
            raise MalformedTrace(f"line {number}: {exc}") from exc
    return events


def trace_digest(events: Iterable[TraceEvent]) -> str:
    return hashlib.sha256(format_trace(events).encode("utf-8")).hexdigest()


class TraceRecorder:
    """
    Collects trace events stamped with the current virtual time.

    ``clock`` is a zero-argument callable returning the current tick; it is
    bound by the network once the event loop exists.
    """

    def __init__(self, clock: Callable[[], int] | None = None):
        self.clock = clock or (lambda: 0)
        self.events: list[TraceEvent] = []

    def emit(self, kind: TraceKind, /, **attributes: Any) -> TraceEvent:
        tick = int(self.clock())
        if self.events and tick < self.events[-1].tick:
            raise InvariantViolation(
                f"Trace tick went backwards: {tick} after {self.events[-1].tick}"
            )
        event = TraceEvent(
            tick,
            kind,
            {key: _to_text(value) for key, value in attributes.items() if value is not None},
        )
        self.events.append(event)
        logger.debug(event.to_line())
        return event

    def since(self, index: int) -> list[TraceEvent]:
        return self.events[index:]

    def of_kind(self, kind: TraceKind, /, **attributes: str) -> list[TraceEvent]:
        return [event for event in self.events if event.matches(kind.value, attributes)]

    def text(self) -> str:
        return format_trace(self.events)
