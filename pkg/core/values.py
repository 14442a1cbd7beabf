"""
The closed value model shared by holon state, sensations, shared state and
the condition language.

A value is one of: ``bool``, ``int``, ``float`` (decimal), ``str``,
``Location`` or ``None``. Equality and ordering are only defined between
values of the same tag; everything else compares as "incomparable".
"""

import json
import math
from enum import Enum
from typing import Any, NamedTuple, Union

DECIMAL_TOLERANCE = 1e-9


class Location(NamedTuple):
    """A lat/long pair in decimal degrees, treated as planar."""

    lat: float
    lon: float

    def distance_to(self, other: "Location") -> float:
        return math.hypot(self.lat - other.lat, self.lon - other.lon)

    def __str__(self) -> str:
        return f"{_format_float(self.lat)},{_format_float(self.lon)}"


Value = Union[bool, int, float, str, Location, None]


class ValueTag(str, Enum):
    BOOLEAN = "boolean"
    INTEGER = "integer"
    DECIMAL = "decimal"
    STRING = "string"
    LOCATION = "location"
    NULL = "null"


def tag_of(value: Any) -> ValueTag:
    # bool before int: bool is an int subclass
    if value is None:
        return ValueTag.NULL
    if isinstance(value, bool):
        return ValueTag.BOOLEAN
    if isinstance(value, int):
        return ValueTag.INTEGER
    if isinstance(value, float):
        return ValueTag.DECIMAL
    if isinstance(value, str):
        return ValueTag.STRING
    if isinstance(value, Location):
        return ValueTag.LOCATION
    raise TypeError(f"{value!r} is not a holon value")


def is_value(value: Any) -> bool:
    try:
        tag_of(value)
    except TypeError:
        return False
    return True


def is_numeric(value: Any) -> bool:
    return tag_of(value) in (ValueTag.INTEGER, ValueTag.DECIMAL)


def values_equal(left: Value, right: Value) -> bool:
    tag = tag_of(left)
    if tag is not tag_of(right) or tag is ValueTag.NULL:
        return False
    if tag is ValueTag.DECIMAL:
        return abs(left - right) <= DECIMAL_TOLERANCE
    if tag is ValueTag.LOCATION:
        return all(abs(a - b) <= DECIMAL_TOLERANCE for a, b in zip(left, right))
    return left == right


def compare(left: Value, right: Value) -> int | None:
    """Three-way comparison, or None when the operands are incomparable."""
    tag = tag_of(left)
    if tag is not tag_of(right) or tag in (ValueTag.NULL, ValueTag.LOCATION, ValueTag.BOOLEAN):
        return 0 if tag is tag_of(right) and values_equal(left, right) else None
    if values_equal(left, right):
        return 0
    return -1 if left < right else 1


def from_json(raw: Any) -> Value:
    """Convert a decoded JSON value; a two-number list becomes a Location."""
    if isinstance(raw, list):
        if len(raw) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw):
            return Location(float(raw[0]), float(raw[1]))
        raise TypeError(f"Only [lat, lon] pairs are accepted as list values, got {raw!r}")
    if isinstance(raw, dict):
        if set(raw) == {"lat", "lon"}:
            return Location(float(raw["lat"]), float(raw["lon"]))
        raise TypeError(f"Objects are not holon values: {raw!r}")
    tag_of(raw)
    return raw


def to_json(value: Value) -> Any:
    if isinstance(value, Location):
        return [value.lat, value.lon]
    return value


def parse_text(text: str) -> Value:
    """Parse a command-line token: numbers, booleans, null, ``lat,lon``; else a string."""
    lowered = text.strip()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered == "null":
        return None
    parts = lowered.split(",")
    if len(parts) == 2:
        try:
            return Location(float(parts[0]), float(parts[1]))
        except ValueError:
            return text
    try:
        return int(lowered)
    except ValueError:
        pass
    try:
        return float(lowered)
    except ValueError:
        return text


def _format_float(number: float) -> str:
    return repr(float(number))


def format_value(value: Value) -> str:
    """Canonical text used in traces and snapshots."""
    tag = tag_of(value)
    if tag is ValueTag.NULL:
        return "null"
    if tag is ValueTag.BOOLEAN:
        return "true" if value else "false"
    if tag is ValueTag.DECIMAL:
        return _format_float(value)
    if tag is ValueTag.LOCATION:
        return str(value)
    if tag is ValueTag.STRING:
        return value
    return str(value)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=to_json)
