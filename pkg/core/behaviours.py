"""
Behaviour engine.

A behaviour is a trigger condition, a set of roles each bound to one holon
resource, and a body of actions. Triggers are evaluated at the mediator
whenever a sensation reaches it or shared state changes; a behaviour whose
trigger holds but whose roles cannot all be bound is deferred and retried
on availability changes.

Instances run as a small interpreter on the virtual clock. Each instance has
a main thread; ``ForEachAsync`` spawns one child thread per role and the
parent waits for all of them. Timed actions complete through scheduled
callbacks carrying the instance epoch, so suspending an instance (which bumps
the epoch) discards anything in flight and the interrupted action runs again
on resume.
"""

import logging
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, ClassVar

from .collaboration import Collaboration, CollaborationHub
from .conditions import EvalContext, Expr, evaluate, holds, parse, parse_expression, referenced_events
from .conditions import referenced_paths, referenced_roots, to_source
from .conf import SimulationConfig
from .exceptions import InstanceNotRunning, InvariantViolation
from .holons import Capability, CapabilityPredicate, HolonRegistry, Resource, Sensation
from .messages import AlertRequest
from .simnet import LinkQuality, SimNetwork
from .trace import TraceKind, TraceRecorder
from .values import Location, Value, format_value, from_json, is_numeric, is_value

logger = logging.getLogger(__name__)

COST_TOLERANCE = 1e-9


class InstanceStatus(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    SUSPENDED = "suspended"
    COMPLETED = "completed"
    ABORTED = "aborted"


ALLOWED_TRANSITIONS = {
    InstanceStatus.QUEUED: {InstanceStatus.RUNNING},
    InstanceStatus.RUNNING: {InstanceStatus.SUSPENDED, InstanceStatus.COMPLETED, InstanceStatus.ABORTED},
    InstanceStatus.SUSPENDED: {InstanceStatus.RUNNING, InstanceStatus.ABORTED},
    InstanceStatus.COMPLETED: set(),
    InstanceStatus.ABORTED: set(),
}

LIVE = (InstanceStatus.QUEUED, InstanceStatus.RUNNING, InstanceStatus.SUSPENDED)


# actions


@dataclass(frozen=True)
class Action:
    keyword: ClassVar[str] = ""

    @property
    def name(self) -> str:
        return type(self).__name__

    def roles(self) -> set[str]:
        return set()


@dataclass(frozen=True)
class Move(Action):
    keyword: ClassVar[str] = "move"
    role: str
    to: Expr

    def roles(self):
        return {self.role}


@dataclass(frozen=True)
class Invoke(Action):
    keyword: ClassVar[str] = "invoke"
    role: str
    capability: str
    args: tuple[tuple[str, Value], ...] = ()
    duration: int | None = None

    def roles(self):
        return {self.role}


@dataclass(frozen=True)
class SetShared(Action):
    keyword: ClassVar[str] = "set"
    path: str
    value: Expr
    role: str | None = None

    def roles(self):
        return {self.role} if self.role else set()


@dataclass(frozen=True)
class Alert(Action):
    keyword: ClassVar[str] = "alert"
    targets: tuple[str, ...]

    def roles(self):
        return set(self.targets)


@dataclass(frozen=True)
class AwaitState(Action):
    keyword: ClassVar[str] = "await"
    condition: Expr
    timeout: int | None = None


@dataclass(frozen=True)
class Branch(Action):
    keyword: ClassVar[str] = "if"
    condition: Expr
    then: tuple[Action, ...] = ()
    otherwise: tuple[Action, ...] = ()


@dataclass(frozen=True)
class ForEachAsync(Action):
    keyword: ClassVar[str] = "foreach_async"
    var: str
    over: tuple[str, ...]
    body: tuple[Action, ...] = ()

    def roles(self):
        return set(self.over)


@dataclass(frozen=True)
class ReturnToBase(Action):
    keyword: ClassVar[str] = "return"
    role: str

    def roles(self):
        return {self.role}


@dataclass(frozen=True)
class DeployMAV(Action):
    keyword: ClassVar[str] = "deploy_mav"
    role: str
    at: Expr | None = None
    between: tuple[str, str] | None = None

    def roles(self):
        return {self.role}


def _actions(raw: Sequence[Mapping[str, Any]] | None) -> tuple[Action, ...]:
    return tuple(action_from_json(item) for item in raw or ())


def action_from_json(raw: Mapping[str, Any]) -> Action:
    """
    Build an action from its record form, e.g.
    ``{"action": "move", "role": "waterCarrier", "to": "sosCall.loc"}``.
    """
    keyword = raw.get("action")
    if keyword == "move":
        return Move(raw["role"], parse_expression(raw["to"]))
    if keyword == "invoke":
        args = tuple(sorted((key, from_json(value)) for key, value in raw.get("args", {}).items()))
        return Invoke(raw["role"], raw["capability"], args, raw.get("duration"))
    if keyword == "set":
        return SetShared(raw["path"], parse_expression(raw["value"]), raw.get("role"))
    if keyword == "alert":
        targets = raw["targets"] if "targets" in raw else [raw["target"]]
        return Alert(tuple(targets))
    if keyword == "await":
        return AwaitState(parse(raw["condition"]), raw.get("timeout"))
    if keyword == "if":
        return Branch(parse(raw["condition"]), _actions(raw.get("then")), _actions(raw.get("else")))
    if keyword == "foreach_async":
        return ForEachAsync(raw["var"], tuple(raw["over"]), _actions(raw.get("body")))
    if keyword == "return":
        return ReturnToBase(raw["role"])
    if keyword == "deploy_mav":
        at = raw.get("at")
        between = raw.get("between")
        return DeployMAV(
            raw.get("role", "relay"),
            parse_expression(at) if at is not None else None,
            tuple(between) if between else None,
        )
    raise ValueError(f"Unknown action {keyword!r}")


# behaviour definitions


@dataclass(frozen=True)
class RoleSpec:
    role_name: str
    predicates: tuple[CapabilityPredicate, ...]

    def __post_init__(self):
        if not self.predicates:
            raise ValueError(f"Role '{self.role_name}' needs at least one capability predicate")

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "RoleSpec":
        return cls(raw["name"], tuple(CapabilityPredicate.from_json(item) for item in raw.get("requires", ())))

    @property
    def capabilities(self) -> set[str]:
        return {predicate.capability for predicate in self.predicates}

    def satisfied_by(self, resource: Resource) -> bool:
        return all(predicate.matches(resource) for predicate in self.predicates)


@dataclass(frozen=True)
class BehaviourDef:
    name: str
    trigger: Expr
    roles: tuple[RoleSpec, ...]
    body: tuple[Action, ...]

    def __post_init__(self):
        names = [role.role_name for role in self.roles]
        if len(names) != len(set(names)):
            raise ValueError(f"Behaviour '{self.name}' declares a role twice")

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "BehaviourDef":
        return cls(
            name=raw["name"],
            trigger=parse(raw["trigger"]),
            roles=tuple(RoleSpec.from_json(item) for item in raw.get("roles", ())),
            body=_actions(raw.get("body")),
        )

    def role(self, name: str) -> RoleSpec:
        for role in self.roles:
            if role.role_name == name:
                return role
        raise KeyError(name)

    def unresolved_roles(self) -> list[str]:
        """Role names used in the body that are neither declared roles nor loop variables."""
        declared = {role.role_name for role in self.roles}
        missing: list[str] = []

        def visit(actions: Iterable[Action], scope: set[str]):
            for action in actions:
                for name in sorted(action.roles()):
                    if name not in declared and name not in scope and name not in missing:
                        missing.append(name)
                if isinstance(action, Branch):
                    visit(action.then, scope)
                    visit(action.otherwise, scope)
                elif isinstance(action, ForEachAsync):
                    visit(action.body, scope | {action.var})

        visit(self.body, set())
        return missing


# role binding


@dataclass(frozen=True)
class RoleBinding:
    assignments: tuple[tuple[str, tuple[str, str]], ...]

    def __getitem__(self, role: str) -> tuple[str, str]:
        return dict(self.assignments)[role]

    def __contains__(self, role: str) -> bool:
        return role in dict(self.assignments)

    def items(self):
        return iter(self.assignments)

    def resources(self) -> set[tuple[str, str]]:
        return {target for _, target in self.assignments}


@dataclass(frozen=True)
class Insufficient:
    missing: tuple[str, ...]


def fuel_cost(resource: Resource) -> float:
    cost = resource.attribute("fuelCost")
    return cost if is_value(cost) and cost is not None and is_numeric(cost) else 0.0


def eligible_resources(
    role: RoleSpec, registry: HolonRegistry, participants: Iterable[str], owner: str | None = None
) -> list[tuple[str, str]]:
    """Resources of the participants that satisfy every predicate and are free (or held by ``owner``)."""
    found = []
    for holon_id in sorted(participants):
        holon = registry.get(holon_id)
        for resource_name in sorted(holon.resources):
            resource = holon.resources[resource_name]
            if resource.engaged_by not in (None, owner):
                continue
            if role.satisfied_by(resource):
                found.append((holon_id, resource_name))
    return found


def bind_roles(
    behaviour: BehaviourDef, registry: HolonRegistry, participants: Iterable[str]
) -> RoleBinding | Insufficient:
    """
    Exhaustive search for the assignment of distinct resources to roles with
    the smallest total fuelCost. Candidates are explored in (holon, resource)
    order, so among equal-cost assignments the lexicographically smallest wins.
    """
    participants = sorted(participants)
    options = [eligible_resources(role, registry, participants) for role in behaviour.roles]
    missing = tuple(role.role_name for role, found in zip(behaviour.roles, options) if not found)
    if missing:
        return Insufficient(missing)
    costs = {
        (holon_id, resource_name): fuel_cost(registry.get(holon_id).resources[resource_name])
        for found in options
        for holon_id, resource_name in found
    }
    best: list[tuple[str, str]] | None = None
    best_cost = math.inf

    def search(index: int, chosen: list[tuple[str, str]], cost: float):
        nonlocal best, best_cost
        if index == len(options):
            if best is None or cost < best_cost - COST_TOLERANCE:
                best, best_cost = list(chosen), cost
            return
        for candidate in options[index]:
            if candidate in chosen:
                continue
            chosen.append(candidate)
            search(index + 1, chosen, cost + costs[candidate])
            chosen.pop()

    search(0, [], 0.0)
    if best is None:
        return Insufficient(tuple(role.role_name for role in behaviour.roles))
    return RoleBinding(tuple((role.role_name, target) for role, target in zip(behaviour.roles, best)))


@dataclass(frozen=True)
class RoleView:
    """A bound role as seen from conditions: resource attributes first, then holon state."""

    registry: HolonRegistry
    holon_id: str
    resource_name: str

    def _resource(self) -> Resource | None:
        return self.registry.get(self.holon_id).resources.get(self.resource_name)

    def field(self, name: str) -> Value:
        if name == "id":
            return self.holon_id
        if name == "resource":
            return self.resource_name
        resource = self._resource()
        value = resource.attribute(name) if resource else None
        if value is None:
            value = self.registry.read_state(self.holon_id, name)
        return value

    def has_capability(self, name: str) -> bool:
        resource = self._resource()
        capability = resource.capability(name) if resource else None
        return capability is not None and capability.available


# instances


@dataclass
class _Frame:
    actions: tuple[Action, ...]
    index: int = 0


@dataclass(eq=False)
class _Thread:
    name: str
    frames: list[_Frame]
    scope: dict[str, str] = field(default_factory=dict)
    parent: "_Thread | None" = None
    pending_children: int = 0
    waiting: AwaitState | None = None
    wait_token: int = 0
    busy: bool = False
    done: bool = False

    @property
    def ready(self) -> bool:
        return not (self.done or self.busy or self.waiting is not None or self.pending_children)

    def current_action(self) -> Action | None:
        while len(self.frames) > 1 and self.frames[-1].index >= len(self.frames[-1].actions):
            self.frames.pop()
        frame = self.frames[-1]
        if frame.index >= len(frame.actions):
            return None
        return frame.actions[frame.index]

    def step(self) -> str:
        return ".".join(str(frame.index) for frame in self.frames)

    def advance(self) -> None:
        self.frames[-1].index += 1


@dataclass
class BehaviourInstance:
    instance_id: str
    seq: int
    behaviour: BehaviourDef
    collab_id: str
    binding: RoleBinding
    cause: str
    status: InstanceStatus = InstanceStatus.QUEUED
    threads: list[_Thread] = field(default_factory=list)
    epoch: int = 0
    suspended_at: int | None = None
    history: list[tuple[int, InstanceStatus]] = field(default_factory=list)
    high_water: int = 0

    @property
    def pc(self) -> int:
        """Index of the next top-level body action."""
        return self.threads[0].frames[0].index

    @property
    def sort_key(self) -> tuple[str, int]:
        return (self.behaviour.name, self.seq)


@dataclass
class _Outcome:
    delay: int = 0
    details: dict[str, Any] = field(default_factory=dict)
    on_complete: Callable[[], None] | None = None
    blocked: bool = False
    push: tuple[Action, ...] | None = None


BLOCKED = _Outcome(blocked=True)


class BehaviourEngine:
    def __init__(
        self,
        registry: HolonRegistry,
        net: SimNetwork,
        recorder: TraceRecorder,
        hub: CollaborationHub,
        config: SimulationConfig | None = None,
    ):
        self.registry = registry
        self.net = net
        self.recorder = recorder
        self.hub = hub
        self.config = config or net.config
        self.instances: dict[str, BehaviourInstance] = {}
        self._fired: set[tuple[str, str, tuple]] = set()
        self._deferred: dict[tuple[str, str], tuple[tuple, Sensation | None]] = {}
        self._positions: dict[tuple[str, str], Location] = {}
        self._counter = 0
        hub.on_formed(self._on_formed)
        hub.on_mediator_sensation(self._on_sensation)
        hub.on_shared_change(self._on_shared_change)
        registry.on_availability(self.on_capability_change)
        registry.on_state(self._on_state)

    # queries

    def live(self) -> list[BehaviourInstance]:
        return sorted(
            (instance for instance in self.instances.values() if instance.status in LIVE),
            key=lambda instance: instance.sort_key,
        )

    def instances_of(self, behaviour_name: str) -> list[BehaviourInstance]:
        return [i for i in self.instances.values() if i.behaviour.name == behaviour_name]

    def register_behaviour(self, collab_id: str, behaviour: BehaviourDef) -> None:
        collab = self.hub.get(collab_id)
        if any(existing.name == behaviour.name for existing in collab.behaviours):
            raise ValueError(f"Behaviour '{behaviour.name}' already registered on {collab_id}")
        collab.behaviours.append(behaviour)
        self.evaluate_triggers(collab)

    def bind_roles(self, behaviour: BehaviourDef, collab: Collaboration) -> RoleBinding | Insufficient:
        return bind_roles(behaviour, self.registry, collab.participants)

    # triggering

    def _trigger_context(self, collab: Collaboration, sensation: Sensation | None) -> EvalContext:
        bindings = {"sensation": sensation} if sensation is not None else {}
        return EvalContext(bindings, collab.shared_state, collab.event_log, self.net.now)

    def _cause_key(self, collab: Collaboration, behaviour: BehaviourDef, sensation: Sensation | None) -> tuple:
        """
        Identity of the state a trigger observed: the shared entries under its
        paths, the triggering sensation when the trigger reads it, and the last
        occurrence of every event kind it mentions.
        """
        paths = referenced_paths(behaviour.trigger)
        entries = collab.replicas[collab.mediator].entries
        key: list[tuple] = []
        for path in sorted(entries):
            if any(path == ref or path.startswith(ref + ".") for ref in paths):
                entry = entries[path]
                key.append(("state", path, entry.timestamp, entry.writer))
        if sensation is not None and "sensation" in referenced_roots(behaviour.trigger):
            key.append(("sensation", sensation.sensation_id))
        for kind in sorted(referenced_events(behaviour.trigger)):
            seen = [s.sensation_id for s in collab.event_log if s.kind == kind]
            if seen:
                key.append(("event", seen[-1]))
        return tuple(key)

    def evaluate_triggers(
        self, collab: Collaboration, sensation: Sensation | None = None
    ) -> list[BehaviourInstance]:
        """Queue an instance for every behaviour whose trigger holds on a state it has not fired for."""
        if not collab.active:
            return []
        queued = []
        ctx = self._trigger_context(collab, sensation)
        for behaviour in sorted(collab.behaviours, key=lambda b: b.name):
            key = self._cause_key(collab, behaviour, sensation)
            if (collab.collab_id, behaviour.name, key) in self._fired:
                continue
            if not holds(behaviour.trigger, ctx):
                continue
            instance = self._try_fire(collab, behaviour, key, sensation)
            if instance is not None:
                queued.append(instance)
        return queued

    def _try_fire(
        self, collab: Collaboration, behaviour: BehaviourDef, key: tuple, sensation: Sensation | None
    ) -> BehaviourInstance | None:
        slot = (collab.collab_id, behaviour.name)
        result = self.bind_roles(behaviour, collab)
        if isinstance(result, Insufficient):
            if slot not in self._deferred or self._deferred[slot][0] != key:
                self.recorder.emit(
                    TraceKind.TRIGGER_DEFERRED,
                    collab=collab.collab_id,
                    behaviour=behaviour.name,
                    missing=result.missing,
                )
                logger.info(f"{behaviour.name} deferred on {collab.collab_id}: missing {list(result.missing)}")
            self._deferred[slot] = (key, sensation)
            return None
        self._deferred.pop(slot, None)
        self._fired.add((collab.collab_id, behaviour.name, key))
        self._counter += 1
        instance = BehaviourInstance(
            instance_id=f"i{self._counter}",
            seq=self._counter,
            behaviour=behaviour,
            collab_id=collab.collab_id,
            binding=result,
            cause=sensation.sensation_id if sensation is not None else "state",
            threads=[_Thread("main", [_Frame(behaviour.body)])],
        )
        instance.history.append((self.net.now, InstanceStatus.QUEUED))
        self.instances[instance.instance_id] = instance
        for _, (holon_id, resource_name) in result.items():
            self.registry.engage(holon_id, resource_name, instance.instance_id)
        self.recorder.emit(
            TraceKind.TRIGGER_FIRED,
            collab=collab.collab_id,
            behaviour=behaviour.name,
            instance=instance.instance_id,
            cause=instance.cause,
        )
        for role, (holon_id, resource_name) in result.items():
            self.recorder.emit(
                TraceKind.ROLE_BOUND,
                instance=instance.instance_id,
                behaviour=behaviour.name,
                role=role,
                holon=holon_id,
                resource=resource_name,
            )
        logger.info(f"Queued {behaviour.name} as {instance.instance_id} with {dict(result.assignments)}")
        self.net.schedule(0, self._start, instance.instance_id)
        return instance

    def _recheck_deferred(self) -> None:
        for slot in sorted(self._deferred):
            if slot not in self._deferred:
                continue
            collab_id, behaviour_name = slot
            key, sensation = self._deferred[slot]
            collab = self.hub.get(collab_id)
            if not collab.active:
                del self._deferred[slot]
                continue
            behaviour = next(b for b in collab.behaviours if b.name == behaviour_name)
            if not holds(behaviour.trigger, self._trigger_context(collab, sensation)):
                del self._deferred[slot]
                continue
            self._try_fire(collab, behaviour, key, sensation)

    def _on_formed(self, collab: Collaboration, predecessors: tuple[Collaboration, ...]) -> None:
        self.evaluate_triggers(collab)

    def _on_sensation(self, collab: Collaboration, sensation: Sensation) -> None:
        self.evaluate_triggers(collab, sensation)
        self._wake()

    def _on_shared_change(self, collab: Collaboration, path: str) -> None:
        self.evaluate_triggers(collab)
        self._wake()

    def _on_state(self, holon_id: str, path: str, value: Value) -> None:
        self._wake()

    # lifecycle

    def _transition(self, instance: BehaviourInstance, status: InstanceStatus) -> None:
        if status not in ALLOWED_TRANSITIONS[instance.status]:
            message = f"Illegal transition {instance.status.value} -> {status.value} for {instance.instance_id}"
            logger.error(message)
            raise InvariantViolation(message)
        instance.status = status
        instance.history.append((self.net.now, status))

    def _binding_satisfiable(self, instance: BehaviourInstance) -> bool:
        for role, (holon_id, resource_name) in instance.binding.items():
            resource = self.registry.get(holon_id).resources.get(resource_name)
            if resource is None or resource.engaged_by not in (None, instance.instance_id):
                return False
            if not instance.behaviour.role(role).satisfied_by(resource):
                return False
        return True

    def _release(self, instance: BehaviourInstance) -> None:
        for _, (holon_id, resource_name) in instance.binding.items():
            self.registry.release(holon_id, resource_name, instance.instance_id)

    def _start(self, instance_id: str) -> None:
        instance = self.instances[instance_id]
        if instance.status is not InstanceStatus.QUEUED:
            return
        self._transition(instance, InstanceStatus.RUNNING)
        if not self._binding_satisfiable(instance):
            self._suspend(instance, reason="binding_unavailable")
            return
        self._schedule_thread(instance, instance.threads[0])

    def _suspend(self, instance: BehaviourInstance, reason: str, **details: Any) -> None:
        self._transition(instance, InstanceStatus.SUSPENDED)
        instance.epoch += 1
        instance.suspended_at = self.net.now
        for thread in instance.threads:
            thread.waiting = None
            thread.busy = False
        self.recorder.emit(
            TraceKind.INSTANCE_SUSPENDED,
            instance=instance.instance_id,
            behaviour=instance.behaviour.name,
            pc=instance.pc,
            reason=reason,
            **details,
        )
        logger.info(f"Suspended {instance.instance_id} at pc {instance.pc} ({reason})")

    def _resume(self, instance: BehaviourInstance) -> None:
        self._transition(instance, InstanceStatus.RUNNING)
        instance.epoch += 1
        self.recorder.emit(
            TraceKind.INSTANCE_RESUMED,
            instance=instance.instance_id,
            behaviour=instance.behaviour.name,
            pc=instance.pc,
            suspended_for=self.net.now - instance.suspended_at,
        )
        logger.info(f"Resumed {instance.instance_id} at pc {instance.pc}")
        instance.suspended_at = None
        for thread in instance.threads:
            if not thread.done and thread.pending_children == 0:
                self._schedule_thread(instance, thread)

    def _abort(self, instance: BehaviourInstance, reason: str) -> None:
        self._transition(instance, InstanceStatus.ABORTED)
        instance.epoch += 1
        self._release(instance)
        self.recorder.emit(
            TraceKind.INSTANCE_ABORTED,
            instance=instance.instance_id,
            behaviour=instance.behaviour.name,
            pc=instance.pc,
            reason=reason,
        )
        logger.warning(f"Aborted {instance.instance_id} ({reason})")
        self._after_release()

    def _complete_instance(self, instance: BehaviourInstance) -> None:
        self._transition(instance, InstanceStatus.COMPLETED)
        self._release(instance)
        self.recorder.emit(
            TraceKind.INSTANCE_COMPLETED, instance=instance.instance_id, behaviour=instance.behaviour.name
        )
        logger.info(f"Completed {instance.behaviour.name} ({instance.instance_id})")
        self._after_release()

    def _after_release(self) -> None:
        self._resume_ready()
        self._recheck_deferred()

    def _resume_ready(self) -> None:
        for instance in self.live():
            if instance.status is InstanceStatus.SUSPENDED and self._binding_satisfiable(instance):
                self._resume(instance)

    def on_capability_change(self, holon_id: str, capability: Capability, available: bool) -> None:
        """
        Suspend instances whose binding uses a capability that went away, resume
        the ones whose bindings are whole again, and retry deferred triggers.
        A removed capability aborts suspended users; running ones abort when
        they invoke it.
        """
        resource = self.registry.get(holon_id).resources.get(capability.provided_by)
        removed = resource is None or capability.name not in resource.capabilities
        if not available:
            for instance in self.live():
                if not self._uses(instance, holon_id, capability):
                    continue
                if removed:
                    if instance.status is InstanceStatus.SUSPENDED:
                        self._abort(instance, "capability_removed")
                elif instance.status is InstanceStatus.RUNNING:
                    self._suspend(
                        instance,
                        reason="capability_unavailable",
                        holon=holon_id,
                        capability=f"{capability.provided_by}.{capability.name}",
                    )
        else:
            self._resume_ready()
        self._recheck_deferred()

    def _uses(self, instance: BehaviourInstance, holon_id: str, capability: Capability) -> bool:
        for role, target in instance.binding.items():
            if target == (holon_id, capability.provided_by) and capability.name in instance.behaviour.role(role).capabilities:
                return True
        return False

    # interpreter

    def _schedule_thread(self, instance: BehaviourInstance, thread: _Thread) -> None:
        self.net.schedule(0, self._run_thread, instance.instance_id, thread, instance.epoch)

    def _live_epoch(self, instance: BehaviourInstance, epoch: int) -> bool:
        return instance.epoch == epoch and instance.status is InstanceStatus.RUNNING

    def step(self, instance: BehaviourInstance) -> InstanceStatus:
        """
        Execute the action at the program counter of every thread of a running
        instance that is not waiting on time, a condition or its children.
        Timed actions complete later on the virtual clock.
        """
        if instance.status is not InstanceStatus.RUNNING:
            raise InstanceNotRunning(instance.instance_id, instance.status.value)
        for thread in list(instance.threads):
            if self._live_epoch(instance, instance.epoch) and thread.ready:
                self._step_thread(instance, thread, instance.epoch)
        return instance.status

    def _run_thread(self, instance_id: str, thread: _Thread, epoch: int) -> None:
        instance = self.instances[instance_id]
        while self._live_epoch(instance, epoch) and thread.ready:
            if not self._step_thread(instance, thread, epoch):
                return

    def _step_thread(self, instance: BehaviourInstance, thread: _Thread, epoch: int) -> bool:
        """One action of ``thread``; False once the thread cannot go on right away."""
        action = thread.current_action()
        if action is None:
            self._thread_finished(instance, thread)
            return False
        outcome = self._execute(instance, thread, action)
        if outcome.blocked or not self._live_epoch(instance, epoch):
            return False
        if outcome.delay > 0:
            thread.busy = True
            self.net.schedule(outcome.delay, self._complete_action, instance.instance_id, thread, action, epoch, outcome)
            return False
        if outcome.on_complete is not None:
            outcome.on_complete()
        self._finish(instance, thread, action, outcome)
        return True

    def _complete_action(
        self, instance_id: str, thread: _Thread, action: Action, epoch: int, outcome: _Outcome
    ) -> None:
        instance = self.instances[instance_id]
        if not self._live_epoch(instance, epoch):
            return
        thread.busy = False
        if outcome.on_complete is not None:
            outcome.on_complete()
        self._finish(instance, thread, action, outcome)
        self._run_thread(instance_id, thread, epoch)

    def _finish(self, instance: BehaviourInstance, thread: _Thread, action: Action, outcome: _Outcome) -> None:
        self.recorder.emit(
            TraceKind.ACTION_EXECUTED,
            instance=instance.instance_id,
            behaviour=instance.behaviour.name,
            action=action.name,
            step=thread.step(),
            thread=thread.name,
            **outcome.details,
        )
        thread.advance()
        if outcome.push is not None:
            thread.frames.append(_Frame(outcome.push))
        if instance.pc < instance.high_water:
            raise InvariantViolation(f"Program counter of {instance.instance_id} moved backwards")
        instance.high_water = instance.pc

    def _thread_finished(self, instance: BehaviourInstance, thread: _Thread) -> None:
        thread.done = True
        parent = thread.parent
        if parent is None:
            self._complete_instance(instance)
            return
        parent.pending_children -= 1
        if parent.pending_children == 0:
            action = parent.current_action()
            self._finish(instance, parent, action, _Outcome(details={"over": action.over}))
            self._run_thread(instance.instance_id, parent, instance.epoch)

    def _context(self, instance: BehaviourInstance, thread: _Thread | None = None) -> EvalContext:
        collab = self.hub.current(instance.collab_id)
        bindings: dict[str, Any] = {
            role: RoleView(self.registry, holon_id, resource_name)
            for role, (holon_id, resource_name) in instance.binding.items()
        }
        if thread is not None:
            for var, role in thread.scope.items():
                bindings[var] = bindings.get(role)
        return EvalContext(bindings, collab.shared_state, collab.event_log, self.net.now)

    def _target(self, instance: BehaviourInstance, thread: _Thread, name: str) -> tuple[str, str]:
        role = thread.scope.get(name, name)
        return instance.binding[role]

    def _travel(self, holon_id: str, resource_name: str, destination: Location) -> int:
        holon = self.registry.get(holon_id)
        start = self._positions.get((holon_id, resource_name), holon.base or Location(0.0, 0.0))
        speed = holon.resources[resource_name].attribute("speed")
        if not (is_value(speed) and speed is not None and is_numeric(speed) and speed > 0):
            speed = self.config.default_speed
        return math.ceil(round(start.distance_to(destination) / speed, 9))

    def _move(self, holon_id: str, resource_name: str, destination: Location, details: dict) -> _Outcome:
        ticks = self._travel(holon_id, resource_name, destination)

        def arrive():
            self._positions[(holon_id, resource_name)] = destination

        details.update(holon=holon_id, resource=resource_name, to=destination, ticks=ticks)
        return _Outcome(delay=ticks, details=details, on_complete=arrive)

    def _execute(self, instance: BehaviourInstance, thread: _Thread, action: Action) -> _Outcome:
        logger.debug(f"{instance.instance_id} [{thread.name}] {action.name} at step {thread.step()}")
        collab = self.hub.current(instance.collab_id)
        if isinstance(action, (Move, ReturnToBase)):
            holon_id, resource_name = self._target(instance, thread, action.role)
            if isinstance(action, Move):
                destination = evaluate(action.to, self._context(instance, thread))
            else:
                destination = self.registry.get(holon_id).base or Location(0.0, 0.0)
            if not isinstance(destination, Location):
                self._abort(instance, "invalid_destination")
                return BLOCKED
            return self._move(holon_id, resource_name, destination, {"role": action.role})
        if isinstance(action, Invoke):
            holon_id, resource_name = self._target(instance, thread, action.role)
            resource = self.registry.get(holon_id).resources[resource_name]
            capability = resource.capability(action.capability)
            if capability is None:
                self._abort(instance, "capability_removed")
                return BLOCKED
            if not capability.available:
                self._suspend(
                    instance,
                    reason="capability_unavailable",
                    holon=holon_id,
                    capability=f"{resource_name}.{action.capability}",
                )
                return BLOCKED
            duration = action.duration if action.duration is not None else self.config.invoke_duration
            details = {"role": action.role, "holon": holon_id, "resource": resource_name, "capability": action.capability}
            details.update({f"arg.{key}": format_value(value) for key, value in action.args})
            return _Outcome(delay=duration, details=details)
        if isinstance(action, SetShared):
            value = evaluate(action.value, self._context(instance, thread))
            writer = collab.mediator
            if action.role:
                holon_id, _ = self._target(instance, thread, action.role)
                if holon_id in collab.participants:
                    writer = holon_id
            self.hub.write_shared(collab.collab_id, writer, action.path, value)
            return _Outcome(details={"path": action.path, "value": format_value(value)})
        if isinstance(action, Alert):
            alerted = []
            for target in action.targets:
                role = thread.scope.get(target, target)
                holon_id = instance.binding[role][0] if role in instance.binding else role
                self.net.send(
                    collab.mediator,
                    holon_id,
                    AlertRequest(collab.mediator, holon_id, collab.collab_id, instance.instance_id),
                )
                alerted.append(holon_id)
            return _Outcome(details={"target": alerted})
        if isinstance(action, AwaitState):
            if holds(action.condition, self._context(instance, thread)):
                return _Outcome(details={"condition": to_source(action.condition)})
            thread.waiting = action
            thread.wait_token += 1
            if action.timeout is not None:
                self.net.schedule(
                    action.timeout,
                    self._await_timeout,
                    instance.instance_id,
                    thread,
                    instance.epoch,
                    thread.wait_token,
                )
            return BLOCKED
        if isinstance(action, Branch):
            taken = holds(action.condition, self._context(instance, thread))
            return _Outcome(
                details={"branch": "then" if taken else "else"},
                push=action.then if taken else action.otherwise,
            )
        if isinstance(action, ForEachAsync):
            if not action.over:
                return _Outcome(details={"over": ()})
            thread.pending_children = len(action.over)
            for role in action.over:
                child = _Thread(
                    name=f"{thread.name}/{action.var}={role}",
                    frames=[_Frame(action.body)],
                    scope={**thread.scope, action.var: role},
                    parent=thread,
                )
                instance.threads.append(child)
                self._schedule_thread(instance, child)
            return BLOCKED
        if isinstance(action, DeployMAV):
            return self._deploy_mav(instance, thread, action)
        raise TypeError(f"Unsupported action {action!r}")

    def _deploy_mav(self, instance: BehaviourInstance, thread: _Thread, action: DeployMAV) -> _Outcome:
        holon_id, resource_name = self._target(instance, thread, action.role)
        relay = f"{holon_id}.{resource_name}"
        destination = None
        if action.at is not None:
            destination = evaluate(action.at, self._context(instance, thread))
        ticks = self._travel(holon_id, resource_name, destination) if isinstance(destination, Location) else 0

        def deploy():
            if isinstance(destination, Location):
                self._positions[(holon_id, resource_name)] = destination
            if not self.net.has_node(relay):
                self.net.register_node(relay)
            if action.between is not None:
                links = [self.net.link(*action.between)]
            else:
                links = [link for link in self.net.links_of(holon_id) if link.quality is LinkQuality.WEAK]
            for link in links:
                self.recorder.emit(
                    TraceKind.MAV_DEPLOYED,
                    instance=instance.instance_id,
                    relay=relay,
                    a=link.endpoints[0],
                    b=link.endpoints[1],
                    at=destination,
                )
                self.net.deploy_relay(relay, *link.endpoints)
            if not links:
                self.recorder.emit(TraceKind.MAV_DEPLOYED, instance=instance.instance_id, relay=relay, at=destination)
            logger.info(f"{relay} deployed as relay on {[link.endpoints for link in links]}")

        return _Outcome(
            delay=ticks,
            details={"role": action.role, "holon": holon_id, "resource": resource_name, "ticks": ticks},
            on_complete=deploy,
        )

    def _wake(self) -> None:
        for instance in self.live():
            if instance.status is not InstanceStatus.RUNNING:
                continue
            for thread in list(instance.threads):
                action = thread.waiting
                if action is None or thread.done:
                    continue
                if holds(action.condition, self._context(instance, thread)):
                    thread.waiting = None
                    self._finish(instance, thread, action, _Outcome(details={"condition": to_source(action.condition)}))
                    self._schedule_thread(instance, thread)

    def _await_timeout(self, instance_id: str, thread: _Thread, epoch: int, token: int) -> None:
        instance = self.instances[instance_id]
        if not self._live_epoch(instance, epoch) or thread.waiting is None or thread.wait_token != token:
            return
        action = thread.waiting
        thread.waiting = None
        self.recorder.emit(
            TraceKind.ACTION_TIMED_OUT,
            instance=instance_id,
            behaviour=instance.behaviour.name,
            step=thread.step(),
            condition=to_source(action.condition),
        )
        thread.advance()
        self._run_thread(instance_id, thread, epoch)

    # auditing

    def audit(self) -> list[str]:
        """Mutual exclusion over live instances and legality of every recorded transition."""
        problems = []
        owners: dict[tuple[str, str], str] = {}
        for instance in self.live():
            for target in sorted(instance.binding.resources()):
                if target in owners:
                    problems.append(f"{target} bound by {owners[target]} and {instance.instance_id}")
                owners[target] = instance.instance_id
        for instance in self.instances.values():
            statuses = [status for _, status in instance.history]
            for before, after in zip(statuses, statuses[1:]):
                if after not in ALLOWED_TRANSITIONS[before]:
                    problems.append(f"{instance.instance_id}: {before.value} -> {after.value}")
        return problems
