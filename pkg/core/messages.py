"""
Protocol and collaboration messages with their canonical binary encoding.

Layout: one tag byte, then every dataclass field in declaration order.
Strings and byte strings are u32-length-prefixed (UTF-8 for strings), ticks
and counters are u64, booleans one byte, string tuples a u32 count followed
by strings, and holon values a one-byte value tag followed by the value.
Encoding the same message always yields the same bytes.
"""

import hashlib
import struct
from collections.abc import Mapping
from dataclasses import dataclass, fields
from types import MappingProxyType
from typing import Any, ClassVar, get_type_hints

from .values import Location, Value, tag_of, ValueTag

Payload = Mapping[str, Value]

_MESSAGE_TYPES: dict[int, type["Message"]] = {}

_VALUE_TAGS = {
    ValueTag.NULL: 0,
    ValueTag.BOOLEAN: 1,
    ValueTag.INTEGER: 2,
    ValueTag.DECIMAL: 3,
    ValueTag.STRING: 4,
    ValueTag.LOCATION: 5,
}


@dataclass(frozen=True)
class Message:
    """Every message names its sender, its recipient and the proposal/composition it concerns."""

    TAG: ClassVar[int] = 0

    sender: str
    recipient: str
    ref: str

    def __init_subclass__(cls, tag: int | None = None, **kwargs):
        super().__init_subclass__(**kwargs)
        if tag is not None:
            if tag in _MESSAGE_TYPES:
                raise ValueError(f"Message tag {tag} is already used by {_MESSAGE_TYPES[tag].__name__}")
            cls.TAG = tag
            _MESSAGE_TYPES[tag] = cls

    @property
    def name(self) -> str:
        return type(self).__name__

    def encode(self) -> bytes:
        return encode(self)

    def digest(self) -> str:
        return hashlib.sha256(self.encode()).hexdigest()[:16]


# composition framework (HCFW)


@dataclass(frozen=True)
class CertRequest(Message, tag=1):
    public_key: bytes


@dataclass(frozen=True)
class CertGrant(Message, tag=2):
    public_key: bytes
    issued_at: int
    issuer_signature: bytes


@dataclass(frozen=True)
class ProposalSubmit(Message, tag=3):
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class SecretDistribute(Message, tag=4):
    secret_id: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class VoteRequest(Message, tag=5):
    kind: str
    subject: str


@dataclass(frozen=True)
class VoteCast(Message, tag=6):
    yes: bool


@dataclass(frozen=True)
class CompositionFinalized(Message, tag=7):
    members: tuple[str, ...]


@dataclass(frozen=True)
class CompositionRejected(Message, tag=8):
    reason: str


@dataclass(frozen=True)
class MemberChangeProposal(Message, tag=9):
    candidate: str
    kind: str


@dataclass(frozen=True)
class MemberChangeResult(Message, tag=10):
    candidate: str
    kind: str
    accepted: bool


# collaboration layer


@dataclass(frozen=True)
class SensationReport(Message, tag=20):
    sensation_id: str
    source: str
    kind: str
    timestamp: int
    payload: Payload


@dataclass(frozen=True)
class SensationForward(Message, tag=21):
    sensation_id: str
    source: str
    kind: str
    timestamp: int
    payload: Payload


@dataclass(frozen=True)
class SharedWrite(Message, tag=22):
    path: str
    value: Value
    timestamp: int
    writer: str


@dataclass(frozen=True)
class SharedUpdate(Message, tag=23):
    path: str
    value: Value
    timestamp: int
    writer: str


@dataclass(frozen=True)
class AlertRequest(Message, tag=24):
    instance_id: str


def message_types() -> Mapping[int, type[Message]]:
    return MappingProxyType(_MESSAGE_TYPES)


# encoding


def _pack_bytes(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _pack_str(text: str) -> bytes:
    return _pack_bytes(text.encode("utf-8"))


def _pack_value(value: Value) -> bytes:
    tag = tag_of(value)
    head = struct.pack(">B", _VALUE_TAGS[tag])
    if tag is ValueTag.NULL:
        return head
    if tag is ValueTag.BOOLEAN:
        return head + struct.pack(">?", value)
    if tag is ValueTag.INTEGER:
        return head + struct.pack(">q", value)
    if tag is ValueTag.DECIMAL:
        return head + struct.pack(">d", value)
    if tag is ValueTag.STRING:
        return head + _pack_str(value)
    return head + struct.pack(">dd", value.lat, value.lon)


def _pack_field(kind: Any, value: Any) -> bytes:
    if kind is str:
        return _pack_str(value)
    if kind is bytes:
        return _pack_bytes(value)
    if kind is bool:
        return struct.pack(">?", value)
    if kind is int:
        return struct.pack(">Q", value)
    if kind == tuple[str, ...]:
        return struct.pack(">I", len(value)) + b"".join(_pack_str(item) for item in value)
    if kind == Payload:
        items = sorted(value.items())
        return struct.pack(">I", len(items)) + b"".join(
            _pack_str(key) + _pack_value(item) for key, item in items
        )
    return _pack_value(value)


def encode(message: Message) -> bytes:
    hints = get_type_hints(type(message))
    out = [struct.pack(">B", message.TAG)]
    for spec in fields(message):
        out.append(_pack_field(hints[spec.name], getattr(message, spec.name)))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> Any:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise ValueError("Truncated message")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values if len(values) > 1 else values[0]

    def take_bytes(self) -> bytes:
        length = self.take(">I")
        if self.offset + length > len(self.data):
            raise ValueError("Truncated message")
        chunk = self.data[self.offset : self.offset + length]
        self.offset += length
        return chunk

    def take_str(self) -> str:
        return self.take_bytes().decode("utf-8")

    def take_value(self) -> Value:
        tag = self.take(">B")
        if tag == 0:
            return None
        if tag == 1:
            return self.take(">?")
        if tag == 2:
            return self.take(">q")
        if tag == 3:
            return self.take(">d")
        if tag == 4:
            return self.take_str()
        if tag == 5:
            lat, lon = self.take(">dd")
            return Location(lat, lon)
        raise ValueError(f"Unknown value tag {tag}")

    def take_field(self, kind: Any) -> Any:
        if kind is str:
            return self.take_str()
        if kind is bytes:
            return self.take_bytes()
        if kind is bool:
            return self.take(">?")
        if kind is int:
            return self.take(">Q")
        if kind == tuple[str, ...]:
            return tuple(self.take_str() for _ in range(self.take(">I")))
        if kind == Payload:
            count = self.take(">I")
            return MappingProxyType({self.take_str(): self.take_value() for _ in range(count)})
        return self.take_value()


def decode(data: bytes) -> Message:
    reader = _Reader(data)
    tag = reader.take(">B")
    try:
        cls = _MESSAGE_TYPES[tag]
    except KeyError as exc:
        raise ValueError(f"Unknown message tag {tag}") from exc
    hints = get_type_hints(cls)
    values = {spec.name: reader.take_field(hints[spec.name]) for spec in fields(cls)}
    if reader.offset != len(data):
        raise ValueError("Trailing bytes after message")
    return cls(**values)
