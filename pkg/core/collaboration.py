"""
Collaboration layer: mediator selection, mediator-sequenced shared state and
sensation dispatch.

Every participant keeps a replica of the shared state. A write is stamped by
its writer with a Lamport timestamp, applied locally, sent to the mediator,
and rebroadcast by the mediator as the winning entry for that path. Entries
are ordered by ``(timestamp, writer)``; replicas converge once the network
has delivered everything.
"""

import hashlib
import logging
import math
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .conf import SimulationConfig
from .exceptions import (
    CompositionsNotMerged,
    EmptyParticipants,
    MissingScore,
    NotAMember,
    NotAParticipant,
)
from .hcfw import CompositionFramework
from .holons import EXTERNAL, HolonRegistry, Sensation
from .messages import SensationForward, SensationReport, SharedUpdate, SharedWrite
from .simnet import LinkQuality, SimNetwork
from .trace import TraceKind, TraceRecorder
from .values import Value, canonical_json, format_value, from_json, tag_of, to_json, values_equal

if TYPE_CHECKING:
    from .behaviours import BehaviourDef

logger = logging.getLogger(__name__)

CRITERIA = ("connectivity", "compute", "battery", "capability_diversity")
SCORE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MediatorPolicy:
    weights: Mapping[str, float]

    def __post_init__(self):
        if any(weight < 0 for weight in self.weights.values()):
            raise ValueError("Mediator weights must be non-negative")
        if not any(weight > 0 for weight in self.weights.values()):
            raise ValueError("At least one mediator weight must be positive")

    @classmethod
    def from_json(cls, raw: Mapping[str, Any] | None) -> "MediatorPolicy":
        weights = {criterion: 0.0 for criterion in CRITERIA}
        weights.update({key: float(value) for key, value in (raw or {"connectivity": 1.0}).items()})
        return cls(weights)


def select_mediator(candidates: Mapping[str, Mapping[str, float]], policy: MediatorPolicy) -> str:
    """
    Weighted-sum argmax over the candidates' criterion scores. Near-equal
    sums count as ties and go to the smallest holon id.
    """
    if not candidates:
        raise EmptyParticipants("Cannot select a mediator among no candidates")
    best_id, best_total = None, -math.inf
    for holon_id in sorted(candidates):
        scores = candidates[holon_id]
        terms = []
        for criterion in sorted(policy.weights):
            weight = policy.weights[criterion]
            if weight == 0:
                continue
            if criterion not in scores:
                raise MissingScore(holon_id, criterion)
            terms.append(weight * scores[criterion])
        total = math.fsum(terms)
        if best_id is None or (
            total > best_total and not math.isclose(total, best_total, rel_tol=SCORE_TOLERANCE, abs_tol=1e-12)
        ):
            best_id, best_total = holon_id, total
    return best_id


def candidate_scores(registry: HolonRegistry, participants: Iterable[str]) -> dict[str, dict[str, float]]:
    """Descriptor scores, with capability_diversity derived when a descriptor omits it."""
    participants = sorted(participants)
    counts = {holon_id: len(registry.get(holon_id).capability_names()) for holon_id in participants}
    widest = max(counts.values(), default=0)
    scores = {}
    for holon_id in participants:
        holon_scores = dict(registry.get(holon_id).scores)
        if "capability_diversity" not in holon_scores:
            holon_scores["capability_diversity"] = counts[holon_id] / widest if widest else 0.0
        scores[holon_id] = holon_scores
    return scores


@dataclass(frozen=True)
class SharedEntry:
    value: Value
    timestamp: int
    writer: str

    def wins_over(self, other: "SharedEntry | None") -> bool:
        return other is None or (self.timestamp, self.writer) > (other.timestamp, other.writer)


class Replica:
    """One participant's copy of the shared state."""

    def __init__(self, owner: str, initial: Mapping[str, SharedEntry] | None = None):
        self.owner = owner
        self.entries: dict[str, SharedEntry] = dict(initial or {})
        self.clock = max((entry.timestamp for entry in self.entries.values()), default=0)

    def stamp(self) -> int:
        self.clock += 1
        return self.clock

    def apply(self, path: str, entry: SharedEntry) -> bool:
        self.clock = max(self.clock, entry.timestamp)
        if entry.wins_over(self.entries.get(path)):
            self.entries[path] = entry
            return True
        return False

    def values(self) -> dict[str, Value]:
        return {path: entry.value for path, entry in self.entries.items()}

    def canonical(self) -> str:
        return canonical_json(
            {path: [to_json(e.value), e.timestamp, e.writer] for path, e in sorted(self.entries.items())}
        )

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class StateBinding:
    """
    A shared-state entry declared by the collaboration, e.g. ``sosCall``
    filled from SOS sensations or ``commLink`` from LinkChanged ``quality``.
    """

    path: str
    initial: Value = None
    sensation: str | None = None
    field: str | None = None
    where: tuple[tuple[str, Value], ...] = ()

    @classmethod
    def from_json(cls, path: str, raw: Mapping[str, Any]) -> "StateBinding":
        bind = raw.get("bind") or {}
        return cls(
            path=path,
            initial=from_json(raw.get("initial")),
            sensation=bind.get("sensation"),
            field=bind.get("field"),
            where=tuple(sorted((key, from_json(value)) for key, value in bind.get("where", {}).items())),
        )

    def matches(self, sensation: Sensation) -> bool:
        if sensation.kind != self.sensation:
            return False
        return all(values_equal(sensation.payload.get(key), value) for key, value in self.where)

    def writes(self, sensation: Sensation) -> list[tuple[str, Value]]:
        if self.field is not None:
            return [(self.path, sensation.payload.get(self.field))]
        return [(f"{self.path}.{key}", value) for key, value in sorted(sensation.payload.items())]


@dataclass
class Collaboration:
    collab_id: str
    composition: str
    participants: frozenset[str]
    mediator: str
    policy: MediatorPolicy
    behaviours: list["BehaviourDef"] = field(default_factory=list)
    bindings: tuple[StateBinding, ...] = ()
    replicas: dict[str, Replica] = field(default_factory=dict)
    event_log: list[Sensation] = field(default_factory=list)
    delivered: dict[str, set[str]] = field(default_factory=lambda: defaultdict(set))
    active: bool = True
    linked_into: str | None = None
    isolated_since: int | None = None
    reelection_deferred: bool = False

    @property
    def shared_state(self) -> dict[str, Value]:
        """The mediator's view, which is the sequencing authority."""
        return self.replicas[self.mediator].values()

    def read(self, path: str) -> Value:
        entry = self.replicas[self.mediator].entries.get(path)
        return entry.value if entry else None

    def entry(self, path: str) -> SharedEntry | None:
        return self.replicas[self.mediator].entries.get(path)

    def divergent(self) -> list[str]:
        reference = self.replicas[self.mediator].canonical()
        return [
            holder
            for holder in sorted(self.replicas)
            if self.replicas[holder].canonical() != reference
        ]


FormedListener = Callable[[Collaboration, tuple[Collaboration, ...]], None]
SensationHook = Callable[[Collaboration, Sensation], None]
SharedHook = Callable[[Collaboration, str], None]


class CollaborationHub:
    """Owns every collaboration of a run and the message handlers behind them."""

    def __init__(
        self,
        registry: HolonRegistry,
        net: SimNetwork,
        recorder: TraceRecorder,
        hcfw: CompositionFramework,
        config: SimulationConfig | None = None,
    ):
        self.registry = registry
        self.net = net
        self.recorder = recorder
        self.hcfw = hcfw
        self.config = config or net.config
        self.collaborations: dict[str, Collaboration] = {}
        self._formed_listeners: list[FormedListener] = []
        self._sensation_hooks: list[SensationHook] = []
        self._shared_hooks: list[SharedHook] = []
        self._counter = 0
        net.subscribe(SensationReport, self._on_report)
        net.subscribe(SensationForward, self._on_forward)
        net.subscribe(SharedWrite, self._on_shared_write)
        net.subscribe(SharedUpdate, self._on_shared_update)
        net.add_link_listener(self._on_link_changed)
        registry.on_sensation(self._on_sensation)

    def on_formed(self, listener: FormedListener) -> None:
        self._formed_listeners.append(listener)

    def on_mediator_sensation(self, hook: SensationHook) -> None:
        self._sensation_hooks.append(hook)

    def on_shared_change(self, hook: SharedHook) -> None:
        self._shared_hooks.append(hook)

    def get(self, collab_id: str) -> Collaboration:
        return self.collaborations[collab_id]

    def active(self) -> list[Collaboration]:
        return [self.collaborations[key] for key in sorted(self.collaborations) if self.collaborations[key].active]

    def current(self, collab_id: str) -> Collaboration | None:
        collab = self.collaborations.get(collab_id)
        while collab is not None and not collab.active and collab.linked_into:
            collab = self.collaborations.get(collab.linked_into)
        return collab

    # formation

    def form_collaboration(
        self,
        composition_id: str,
        participants: Iterable[str],
        policy: MediatorPolicy,
        behaviours: Iterable["BehaviourDef"] = (),
        collab_id: str | None = None,
        bindings: Iterable[StateBinding] = (),
    ) -> Collaboration:
        record = self.hcfw.record(composition_id)
        participants = frozenset(participants)
        if not participants:
            raise EmptyParticipants(f"Collaboration on '{composition_id}' has no participants")
        for holon_id in sorted(participants):
            if holon_id not in record.members:
                raise NotAMember(holon_id, composition_id)
        mediator = select_mediator(candidate_scores(self.registry, participants), policy)
        self._counter += 1
        collab_id = collab_id or f"{composition_id}/c{self._counter}"
        bindings = tuple(bindings)
        initial = {
            binding.path: SharedEntry(binding.initial, 0, "")
            for binding in bindings
            if binding.initial is not None
        }
        collab = Collaboration(
            collab_id=collab_id,
            composition=composition_id,
            participants=participants,
            mediator=mediator,
            policy=policy,
            behaviours=list(behaviours),
            bindings=bindings,
            replicas={holon_id: Replica(holon_id, initial) for holon_id in sorted(participants)},
        )
        self.collaborations[collab_id] = collab
        self.recorder.emit(
            TraceKind.MEDIATOR_SELECTED,
            collab=collab_id,
            composition=composition_id,
            mediator=mediator,
            participants=participants,
            reason="formation",
        )
        logger.info(f"Collaboration {collab_id} formed; mediator {mediator}")
        for listener in list(self._formed_listeners):
            listener(collab, ())
        return collab

    def link_collaborations(self, a: str, b: str, collab_id: str | None = None) -> Collaboration:
        """Join two collaborations whose compositions were merged into one."""
        first, second = self.collaborations[a], self.collaborations[b]
        record_a = self.hcfw.record(first.composition)
        record_b = self.hcfw.record(second.composition)
        merged = record_a.merged_into
        if merged is None or merged != record_b.merged_into:
            raise CompositionsNotMerged(
                f"'{first.composition}' and '{second.composition}' have not been merged"
            )
        participants = first.participants | second.participants
        mediator = select_mediator(candidate_scores(self.registry, participants), first.policy)
        union: dict[str, SharedEntry] = {}
        for source in (first, second):
            for path, entry in source.replicas[source.mediator].entries.items():
                if entry.wins_over(union.get(path)):
                    union[path] = entry
        names = set()
        behaviours = []
        for behaviour in first.behaviours + second.behaviours:
            if behaviour.name not in names:
                names.add(behaviour.name)
                behaviours.append(behaviour)
        bindings = tuple(dict.fromkeys(first.bindings + second.bindings))
        collab_id = collab_id or f"{a}+{b}"
        linked = Collaboration(
            collab_id=collab_id,
            composition=merged,
            participants=participants,
            mediator=mediator,
            policy=first.policy,
            behaviours=behaviours,
            bindings=bindings,
            replicas={holon_id: Replica(holon_id, union) for holon_id in sorted(participants)},
            event_log=sorted(first.event_log + second.event_log, key=lambda s: (s.timestamp, s.sensation_id)),
        )
        for source in (first, second):
            source.active = False
            source.linked_into = collab_id
        self.collaborations[collab_id] = linked
        self.recorder.emit(
            TraceKind.COLLABORATION_LINKED, collab=collab_id, composition=merged, linked=(a, b)
        )
        self.recorder.emit(
            TraceKind.MEDIATOR_SELECTED,
            collab=collab_id,
            composition=merged,
            mediator=mediator,
            participants=participants,
            reason="link",
        )
        logger.info(f"Linked {a} and {b} into {collab_id}; mediator {mediator}")
        for listener in list(self._formed_listeners):
            listener(linked, (first, second))
        return linked

    # shared state

    def write_shared(self, collab_id: str, writer: str, path: str, value: Value) -> SharedEntry:
        collab = self.current(collab_id)
        if collab is None:
            raise KeyError(f"Unknown collaboration '{collab_id}'")
        if writer not in collab.participants:
            raise NotAParticipant(writer, collab.collab_id)
        tag_of(value)
        replica = collab.replicas[writer]
        entry = SharedEntry(value, replica.stamp(), writer)
        replica.apply(path, entry)
        self.recorder.emit(
            TraceKind.SHARED_WRITE,
            collab=collab.collab_id,
            path=path,
            value=format_value(value),
            ts=entry.timestamp,
            writer=writer,
        )
        if writer == collab.mediator:
            self._sequence(collab, path)
        else:
            self.net.send(
                writer,
                collab.mediator,
                SharedWrite(writer, collab.mediator, collab.collab_id, path, value, entry.timestamp, writer),
            )
        return entry

    def _sequence(self, collab: Collaboration, path: str) -> None:
        winning = collab.replicas[collab.mediator].entries[path]
        for participant in sorted(collab.participants - {collab.mediator}):
            self.net.send(
                collab.mediator,
                participant,
                SharedUpdate(
                    collab.mediator,
                    participant,
                    collab.collab_id,
                    path,
                    winning.value,
                    winning.timestamp,
                    winning.writer,
                ),
            )
        for hook in list(self._shared_hooks):
            hook(collab, path)

    def _on_shared_write(self, envelope, message: SharedWrite) -> None:
        collab = self.current(message.ref)
        if collab is None:
            logger.warning(f"SharedWrite for unknown collaboration {message.ref}")
            return
        if envelope.dst != collab.mediator:
            # mediator changed while the write was in flight
            self.net.send(
                envelope.dst,
                collab.mediator,
                SharedWrite(
                    envelope.dst, collab.mediator, collab.collab_id, message.path, message.value,
                    message.timestamp, message.writer,
                ),
            )
            return
        entry = SharedEntry(message.value, message.timestamp, message.writer)
        collab.replicas[collab.mediator].apply(message.path, entry)
        self._sequence(collab, message.path)

    def _on_shared_update(self, envelope, message: SharedUpdate) -> None:
        collab = self.current(message.ref)
        if collab is None or envelope.dst not in collab.replicas:
            return
        entry = SharedEntry(message.value, message.timestamp, message.writer)
        collab.replicas[envelope.dst].apply(message.path, entry)

    # sensations

    def _on_sensation(self, sensation: Sensation) -> None:
        for collab in self.active():
            members = self.hcfw.record(collab.composition).members
            if (
                sensation.source == EXTERNAL
                or sensation.source in members
                or sensation.source in collab.participants
            ):
                self.dispatch_sensation(collab.collab_id, sensation)

    def dispatch_sensation(self, collab_id: str, sensation: Sensation) -> None:
        """Route a sensation to the mediator, which forwards it to every other participant."""
        collab = self.current(collab_id)
        source = sensation.source
        if source in collab.participants and source != collab.mediator:
            self._mark_delivered(collab, sensation, source)
        if source == collab.mediator or source == EXTERNAL or not self.net.has_node(source):
            self._at_mediator(collab, sensation)
            return
        self.net.send(
            source,
            collab.mediator,
            SensationReport(
                source,
                collab.mediator,
                collab.collab_id,
                sensation.sensation_id,
                source,
                sensation.kind,
                sensation.timestamp,
                sensation.payload,
            ),
        )

    def _on_report(self, envelope, message: SensationReport) -> None:
        collab = self.current(message.ref)
        if collab is None:
            return
        sensation = Sensation(
            message.sensation_id, message.source, message.kind, message.payload, message.timestamp
        )
        if envelope.dst != collab.mediator:
            self.dispatch_sensation(collab.collab_id, sensation)
            return
        self._at_mediator(collab, sensation)

    def _at_mediator(self, collab: Collaboration, sensation: Sensation) -> None:
        if not self._mark_delivered(collab, sensation, collab.mediator):
            return
        collab.event_log.append(sensation)
        for binding in collab.bindings:
            if binding.matches(sensation):
                for path, value in binding.writes(sensation):
                    self.write_shared(collab.collab_id, collab.mediator, path, value)
        for participant in sorted(collab.participants - {collab.mediator, sensation.source}):
            self.net.send(
                collab.mediator,
                participant,
                SensationForward(
                    collab.mediator,
                    participant,
                    collab.collab_id,
                    sensation.sensation_id,
                    sensation.source,
                    sensation.kind,
                    sensation.timestamp,
                    sensation.payload,
                ),
            )
        for hook in list(self._sensation_hooks):
            hook(collab, sensation)

    def _on_forward(self, envelope, message: SensationForward) -> None:
        collab = self.current(message.ref)
        if collab is None or envelope.dst not in collab.participants:
            return
        sensation = Sensation(
            message.sensation_id, message.source, message.kind, message.payload, message.timestamp
        )
        self._mark_delivered(collab, sensation, envelope.dst)

    def _mark_delivered(self, collab: Collaboration, sensation: Sensation, participant: str) -> bool:
        seen = collab.delivered[sensation.sensation_id]
        if participant in seen:
            logger.warning(f"Duplicate delivery of {sensation.sensation_id} to {participant}")
            return False
        seen.add(participant)
        self.recorder.emit(
            TraceKind.SENSATION_DELIVERED,
            collab=collab.collab_id,
            sensation=sensation.sensation_id,
            kind=sensation.kind,
            dst=participant,
        )
        return True

    # mediator failure

    def _is_isolated(self, collab: Collaboration) -> bool:
        others = collab.participants - {collab.mediator}
        return bool(others) and not any(self.net.is_reachable(collab.mediator, other) for other in others)

    def _on_link_changed(self, a: str, b: str, old: LinkQuality, new: LinkQuality) -> None:
        for collab in self.active():
            if collab.mediator not in (a, b):
                continue
            if self._is_isolated(collab):
                if collab.isolated_since is None:
                    collab.isolated_since = self.net.now
                    logger.warning(f"Mediator {collab.mediator} of {collab.collab_id} is isolated")
                    self.net.schedule(
                        self.config.reelection_timeout,
                        self._reelect,
                        collab.collab_id,
                        collab.isolated_since,
                    )
            else:
                collab.isolated_since = None
                collab.reelection_deferred = False
        for collab in self.active():
            if collab.reelection_deferred:
                self._reelect(collab.collab_id, collab.isolated_since)

    def _electable(self, collab: Collaboration) -> set[str]:
        """Participants other than the mediator that still reach one of the rest."""
        remaining = collab.participants - {collab.mediator}
        return {
            candidate
            for candidate in remaining
            if len(remaining) == 1
            or any(self.net.is_reachable(candidate, other) for other in remaining - {candidate})
        }

    def _reelect(self, collab_id: str, since: int) -> None:
        collab = self.collaborations[collab_id]
        if not collab.active or collab.isolated_since != since:
            return
        previous = collab.mediator
        candidates = self._electable(collab)
        if not candidates:
            if not collab.reelection_deferred:
                logger.warning(f"No reachable candidate to replace {previous} in {collab_id}; waiting for a link change")
            collab.reelection_deferred = True
            return
        collab.reelection_deferred = False
        mediator = select_mediator(candidate_scores(self.registry, candidates), collab.policy)
        collab.mediator = mediator
        collab.isolated_since = None
        self.recorder.emit(
            TraceKind.MEDIATOR_SELECTED,
            collab=collab_id,
            composition=collab.composition,
            mediator=mediator,
            participants=collab.participants,
            previous=previous,
            reason="reelection",
        )
        logger.warning(f"Re-elected {mediator} as mediator of {collab_id} (was {previous})")

    # snapshots

    def snapshot(self, collab_id: str) -> dict[str, str]:
        """Trace one StateSnapshot per replica; returns holder -> digest."""
        collab = self.collaborations[collab_id]
        digests = {}
        for holder in sorted(collab.replicas):
            replica = collab.replicas[holder]
            digests[holder] = replica.digest()
            self.recorder.emit(
                TraceKind.STATE_SNAPSHOT,
                collab=collab_id,
                holder=holder,
                digest=digests[holder],
                entries=len(replica.entries),
                mediator="true" if holder == collab.mediator else "false",
            )
        return digests
