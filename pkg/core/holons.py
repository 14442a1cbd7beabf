"""
Foundation layer: holons, their resources and capabilities, versioned local
state and sensation emission.
"""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any

from .exceptions import DuplicateId, ResourceBusy, UnknownCapability, UnknownHolon
from .messages import AlertRequest
from .simnet import LinkQuality, SimNetwork
from .trace import TraceKind, TraceRecorder
from .values import Location, Value, format_value, from_json, tag_of, values_equal

logger = logging.getLogger(__name__)

EXTERNAL = "external"


class ResourceStatus(str, Enum):
    IDLE = "idle"
    ENGAGED = "engaged"
    UNAVAILABLE = "unavailable"


@dataclass
class Capability:
    name: str
    provided_by: str
    available: bool = True
    attributes: dict[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ValueError("Capability name must not be empty")


@dataclass
class Resource:
    name: str
    capabilities: dict[str, Capability] = field(default_factory=dict)
    status: ResourceStatus = ResourceStatus.IDLE
    engaged_by: str | None = None

    def capability(self, name: str) -> Capability | None:
        return self.capabilities.get(name)

    def attribute(self, name: str) -> Value:
        """First capability attribute called ``name``, in capability order."""
        for capability in self.capabilities.values():
            if name in capability.attributes:
                return capability.attributes[name]
        return None

    def refresh_status(self) -> None:
        if self.engaged_by is not None:
            self.status = ResourceStatus.ENGAGED
        elif any(c.available for c in self.capabilities.values()) or not self.capabilities:
            self.status = ResourceStatus.IDLE
        else:
            self.status = ResourceStatus.UNAVAILABLE


@dataclass(frozen=True)
class CapabilityPredicate:
    """
    A capability that must be present and available on one resource, with
    optional attribute constraints (e.g. ``waterTank`` with ``waterLevel`` full).
    """

    capability: str
    constraints: tuple[tuple[str, Value], ...] = ()

    @classmethod
    def from_json(cls, raw: Mapping[str, Any] | str) -> "CapabilityPredicate":
        if isinstance(raw, str):
            return cls(raw)
        constraints = tuple(sorted((key, from_json(value)) for key, value in raw.get("where", {}).items()))
        return cls(raw["capability"], constraints)

    def matches(self, resource: Resource) -> bool:
        capability = resource.capability(self.capability)
        if capability is None or not capability.available:
            return False
        for key, expected in self.constraints:
            actual = capability.attributes.get(key, resource.attribute(key))
            if actual is None or not values_equal(actual, expected):
                return False
        return True

    def __str__(self) -> str:
        where = "".join(f" {key}={format_value(value)}" for key, value in self.constraints)
        return f"{self.capability}{where}"


class HolonState:
    """
    Dotted-path map with a version counter. Every write bumps the version and
    is kept in a history so reads can be answered as of an earlier version.
    """

    def __init__(self, initial: Mapping[str, Value] | None = None):
        self._initial: dict[str, Value] = dict(initial or {})
        self.entries: dict[str, Value] = dict(self._initial)
        self.version = 0
        self._history: list[tuple[int, str, Value]] = []

    def write(self, path: str, value: Value) -> int:
        tag_of(value)
        self.version += 1
        self.entries[path] = value
        self._history.append((self.version, path, value))
        return self.version

    def read(self, path: str, at_version: int | None = None) -> Value:
        if at_version is None or at_version >= self.version:
            return self.entries.get(path)
        value = self._initial.get(path)
        for version, written, written_value in self._history:
            if version > at_version:
                break
            if written == path:
                value = written_value
        return value


@dataclass(frozen=True)
class Sensation:
    sensation_id: str
    source: str
    kind: str
    payload: Mapping[str, Value]
    timestamp: int

    def field(self, name: str) -> Value:
        if name == "kind":
            return self.kind
        if name == "source":
            return self.source
        if name == "timestamp":
            return self.timestamp
        return self.payload.get(name)


@dataclass
class Holon:
    holon_id: str
    resources: dict[str, Resource] = field(default_factory=dict)
    state: HolonState = field(default_factory=HolonState)
    scores: dict[str, float] = field(default_factory=dict)
    base: Location | None = None
    vote: str = "yes"
    response_time: int | None = None
    is_composition: bool = False

    def capability_names(self) -> set[str]:
        return {name for resource in self.resources.values() for name in resource.capabilities}

    def find_capabilities(self, name: str) -> list[Capability]:
        """Resolve ``capability`` or ``resource.capability``."""
        if "." in name:
            resource_name, capability_name = name.split(".", 1)
            resource = self.resources.get(resource_name)
            found = resource.capability(capability_name) if resource else None
            return [found] if found else []
        return [
            resource.capabilities[name]
            for resource in self.resources.values()
            if name in resource.capabilities
        ]


SensationListener = Callable[[Sensation], None]
AvailabilityListener = Callable[[str, Capability, bool], None]
StateListener = Callable[[str, str, Value], None]


def holon_from_descriptor(descriptor: Mapping[str, Any]) -> Holon:
    """Build a holon from a scenario descriptor (see scenario.schema.json)."""
    holon_id = descriptor["id"]
    resources = {}
    for raw_resource in descriptor.get("resources", []):
        resource = Resource(raw_resource["name"])
        for raw_cap in raw_resource.get("capabilities", []):
            attributes = {key: from_json(value) for key, value in raw_cap.get("attributes", {}).items()}
            resource.capabilities[raw_cap["name"]] = Capability(
                raw_cap["name"], resource.name, raw_cap.get("available", True), attributes
            )
        resource.refresh_status()
        resources[resource.name] = resource
    state = HolonState({key: from_json(value) for key, value in descriptor.get("state", {}).items()})
    base = descriptor.get("base")
    return Holon(
        holon_id=holon_id,
        resources=resources,
        state=state,
        scores={key: float(value) for key, value in descriptor.get("scores", {}).items()},
        base=from_json(base) if base is not None else None,
        vote=descriptor.get("vote", "yes"),
        response_time=descriptor.get("response_time"),
    )


class HolonRegistry:
    """
    All holons of a run. Owns sensation emission: a sensation is stamped
    with the virtual time, traced, and handed to listeners (the collaboration
    hub, the composition framework) through the event queue.
    """

    def __init__(self, net: SimNetwork, recorder: TraceRecorder):
        self.net = net
        self.recorder = recorder
        self._holons: dict[str, Holon] = {}
        self._sensation_listeners: list[SensationListener] = []
        self._availability_listeners: list[AvailabilityListener] = []
        self._state_listeners: list[StateListener] = []
        self._sensation_counter = 0
        net.add_link_listener(self._on_link_changed)
        net.subscribe(AlertRequest, self._on_alert)

    def __contains__(self, holon_id: str) -> bool:
        return holon_id in self._holons

    def __iter__(self):
        return iter(sorted(self._holons))

    def register_holon(self, descriptor: Mapping[str, Any] | Holon) -> str:
        holon = descriptor if isinstance(descriptor, Holon) else holon_from_descriptor(descriptor)
        if not holon.holon_id:
            raise ValueError("Holon id must not be empty")
        if holon.holon_id in self._holons:
            raise DuplicateId(holon.holon_id)
        self._holons[holon.holon_id] = holon
        if not self.net.has_node(holon.holon_id):
            self.net.register_node(holon.holon_id)
        logger.debug(f"Registered holon {holon.holon_id} with resources {sorted(holon.resources)}")
        return holon.holon_id

    def get(self, holon_id: str) -> Holon:
        try:
            return self._holons[holon_id]
        except KeyError as exc:
            raise UnknownHolon(holon_id) from exc

    def holons(self) -> list[Holon]:
        return [self._holons[key] for key in sorted(self._holons)]

    # listeners

    def on_sensation(self, listener: SensationListener) -> None:
        self._sensation_listeners.append(listener)

    def on_availability(self, listener: AvailabilityListener) -> None:
        self._availability_listeners.append(listener)

    def on_state(self, listener: StateListener) -> None:
        self._state_listeners.append(listener)

    # sensations

    def emit_sensation(self, holon_id: str, kind: str, payload: Mapping[str, Any] | None = None) -> Sensation:
        if holon_id != EXTERNAL:
            self.get(holon_id)
        self._sensation_counter += 1
        values = {key: value if isinstance(value, Location) else from_json(value) for key, value in (payload or {}).items()}
        sensation = Sensation(
            sensation_id=f"s{self._sensation_counter}",
            source=holon_id,
            kind=kind,
            payload=MappingProxyType(values),
            timestamp=self.net.now,
        )
        self.recorder.emit(
            TraceKind.SENSATION_EMITTED,
            sensation=sensation.sensation_id,
            source=holon_id,
            kind=kind,
            **{f"payload.{key}": format_value(value) for key, value in values.items()},
        )
        self.net.schedule(0, self._deliver_sensation, sensation)
        return sensation

    def _deliver_sensation(self, sensation: Sensation) -> None:
        for listener in list(self._sensation_listeners):
            listener(sensation)

    def _on_link_changed(self, a: str, b: str, old: LinkQuality, new: LinkQuality) -> None:
        for endpoint, peer in ((a, b), (b, a)):
            if endpoint in self._holons:
                self.emit_sensation(endpoint, "LinkChanged", {"peer": peer, "quality": new.value})

    # capabilities

    def set_capability_available(self, holon_id: str, capability: str, available: bool) -> None:
        holon = self.get(holon_id)
        found = holon.find_capabilities(capability)
        if not found:
            raise UnknownCapability(holon_id, capability)
        for cap in found:
            if cap.available is available:
                continue
            cap.available = available
            holon.resources[cap.provided_by].refresh_status()
            logger.info(f"{holon_id}.{cap.provided_by}.{cap.name} available={available}")
            for listener in list(self._availability_listeners):
                listener(holon_id, cap, available)

    def remove_capability(self, holon_id: str, resource_name: str, capability: str) -> None:
        holon = self.get(holon_id)
        resource = holon.resources.get(resource_name)
        if resource is None or capability not in resource.capabilities:
            raise UnknownCapability(holon_id, f"{resource_name}.{capability}")
        cap = resource.capabilities.pop(capability)
        resource.refresh_status()
        logger.info(f"Removed capability {holon_id}.{resource_name}.{capability}")
        for listener in list(self._availability_listeners):
            listener(holon_id, cap, False)

    def engage(self, holon_id: str, resource_name: str, owner: str) -> None:
        resource = self.get(holon_id).resources[resource_name]
        if resource.engaged_by is not None and resource.engaged_by != owner:
            raise ResourceBusy(
                f"{holon_id}.{resource_name} is engaged by {resource.engaged_by}, not {owner}"
            )
        resource.engaged_by = owner
        resource.refresh_status()

    def release(self, holon_id: str, resource_name: str, owner: str) -> None:
        resource = self.get(holon_id).resources[resource_name]
        if resource.engaged_by == owner:
            resource.engaged_by = None
            resource.refresh_status()

    # state

    def read_state(self, holon_id: str, path: str, at_version: int | None = None) -> Value:
        return self.get(holon_id).state.read(path, at_version)

    def write_state(self, holon_id: str, path: str, value: Value) -> int:
        version = self.get(holon_id).state.write(path, value)
        for listener in list(self._state_listeners):
            listener(holon_id, path, value)
        return version

    # alert responders

    def _on_alert(self, envelope, message: AlertRequest) -> None:
        """An alerted holon reports ``alerted`` now and ``on_site`` after its response time."""
        holon_id = envelope.dst
        if holon_id not in self._holons:
            return
        holon = self._holons[holon_id]
        response_time = holon.response_time
        if response_time is None:
            response_time = self.net.config.default_response_time
        logger.info(f"{holon_id} alerted by {envelope.src}; on site in {response_time} tick(s)")
        self.write_state(holon_id, "status", "alerted")
        self.net.schedule(response_time, self.write_state, holon_id, "status", "on_site")
