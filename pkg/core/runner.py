"""
Runs a scenario end to end: holon initialization, composition, collaboration
formation and injection playback on the simulated network, until quiescence
or the duration cap. Invariants are checked after every event.
"""

import logging
import random
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .behaviours import BehaviourEngine
from .collaboration import CollaborationHub
from .conf import SimulationConfig
from .crypto import LedgerCryptoProvider
from .exceptions import CompositionsNotMerged, InvariantViolation, UnresolvedReference
from .hcfw import CompositionFramework, CompositionRecord, VotingConfig
from .holons import EXTERNAL, HolonRegistry
from .scenario import AvailabilityChange, Injection, PairSpec, ScenarioFile, parse_injection
from .simnet import SimNetwork
from .trace import TraceEvent, TraceRecorder, format_trace, trace_digest

logger = logging.getLogger(__name__)


class RunStatus(str, Enum):
    QUIESCENT = "quiescent"
    INVARIANT_VIOLATION = "invariant_violation"
    DURATION_CAP = "duration_cap"

    @property
    def exit_code(self) -> int:
        return {"quiescent": 0, "invariant_violation": 1, "duration_cap": 2}[self.value]


@dataclass
class RunResult:
    scenario: str
    seed: int
    duration: int
    status: RunStatus
    final_tick: int
    events: list[TraceEvent]
    diagnostics: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return self.status.exit_code

    @property
    def trace_text(self) -> str:
        return format_trace(self.events)

    @property
    def digest(self) -> str:
        return trace_digest(self.events)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.trace_text.encode("utf-8"))
        return path


class Simulation:
    def __init__(
        self,
        scenario: ScenarioFile,
        config: SimulationConfig | None = None,
        seed: int | None = None,
        duration: int | None = None,
    ):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.config = (config or SimulationConfig.from_settings()).with_overrides(dict(scenario.config))
        self.duration = duration if duration is not None else (scenario.duration or self.config.default_duration)
        self.recorder = TraceRecorder()
        self.crypto = LedgerCryptoProvider(random.Random(f"keys-{self.seed}"))
        self.net = SimNetwork(self.seed, self.config, self.recorder, self.crypto)
        for node in scenario.nodes:
            self.net.register_node(node)
        self.registry = HolonRegistry(self.net, self.recorder)
        self.hcfw = CompositionFramework(
            self.registry,
            self.net,
            self.crypto,
            self.recorder,
            trusted_entity=scenario.trusted_entity,
            voting=VotingConfig.from_config(self.config),
        )
        self.hub = CollaborationHub(self.registry, self.net, self.recorder, self.hcfw, self.config)
        self.engine = BehaviourEngine(self.registry, self.net, self.recorder, self.hub, self.config)
        self.hcfw.on_composition(self._on_composition)
        self._next_snapshot = self.config.snapshot_interval or None
        self._prepared = False

    # setup

    def _prepare(self) -> None:
        scenario = self.scenario
        for descriptor in scenario.holons:
            self.registry.register_holon(descriptor)
        for holon_id in scenario.holon_ids:
            self.hcfw.initialize(holon_id)
        behaviours_by_composition: dict[str, set[str]] = {}
        for spec in scenario.collaborations:
            names = behaviours_by_composition.setdefault(spec.composition, set())
            names.update(behaviour.name for behaviour in spec.behaviours)
        for spec in scenario.compositions:
            voting = VotingConfig.from_config(self.config, **spec.voting)
            self.net.schedule_at(
                spec.tick,
                self.hcfw.propose_composition,
                spec.initiator,
                spec.candidates,
                spec.rules,
                voting,
                sorted(behaviours_by_composition.get(spec.composition_id, ())),
                spec.composition_id,
            )
        for merge in scenario.merges:
            self.net.schedule_at(merge.tick, self._merge, merge)
        for link in scenario.links:
            self.net.schedule_at(link.tick, self._link, link)
        for injection in scenario.injections:
            self.net.schedule_at(injection.tick, self._inject, injection)
        for change in scenario.link_schedule:
            self.net.schedule_at(change.tick, self.net.set_link, change.a, change.b, change.quality)
        for change in scenario.availability_schedule:
            self.net.schedule_at(change.tick, self._apply_availability, change)
        self._prepared = True

    def _on_composition(self, record: CompositionRecord) -> None:
        for spec in self.scenario.collaborations:
            if spec.composition != record.composition_id or spec.collab_id in self.hub.collaborations:
                continue
            self.hub.form_collaboration(
                record.composition_id,
                spec.participants,
                spec.policy,
                behaviours=spec.behaviours,
                collab_id=spec.collab_id,
                bindings=spec.bindings,
            )

    def _merge(self, merge: PairSpec) -> None:
        if merge.a not in self.hcfw.compositions or merge.b not in self.hcfw.compositions:
            logger.warning(f"Skipping merge of {merge.a} and {merge.b}: not both formed")
            return
        self.hcfw.merge_compositions(merge.a, merge.b, merge.target_id)

    def _link(self, link: PairSpec) -> None:
        if link.a not in self.hub.collaborations or link.b not in self.hub.collaborations:
            logger.warning(f"Skipping link of {link.a} and {link.b}: not both formed")
            return
        try:
            self.hub.link_collaborations(link.a, link.b, link.target_id)
        except CompositionsNotMerged as exc:
            logger.warning(f"Skipping link of {link.a} and {link.b}: {exc}")

    def _inject(self, injection: Injection) -> None:
        self.registry.emit_sensation(injection.holon, injection.kind, dict(injection.payload))

    def _apply_availability(self, change: AvailabilityChange) -> None:
        if change.remove:
            resource, _, capability = change.capability.rpartition(".")
            if not resource:
                resource = self.registry.get(change.holon).find_capabilities(capability)[0].provided_by
            self.registry.remove_capability(change.holon, resource, capability)
        else:
            self.registry.set_capability_available(change.holon, change.capability, change.available)

    # invariants

    def _observe(self) -> None:
        if self._next_snapshot is not None:
            while self.net.now >= self._next_snapshot:
                for collab in self.hub.active():
                    self.hub.snapshot(collab.collab_id)
                self._next_snapshot += self.config.snapshot_interval
        problems = self.hcfw.audit() + self.engine.audit()
        if problems:
            raise InvariantViolation("; ".join(problems))

    def _check_convergence(self) -> None:
        if self.net.pending_count():
            logger.warning(
                f"{self.net.pending_count()} message(s) held on down links; skipping convergence check"
            )
            return
        problems = []
        for collab in self.hub.active():
            digests = self.hub.snapshot(collab.collab_id)
            reference = digests[collab.mediator]
            diverging = sorted(holder for holder, digest in digests.items() if digest != reference)
            if diverging:
                problems.append(f"{collab.collab_id}: replicas of {diverging} differ from mediator {collab.mediator}")
        if problems:
            raise InvariantViolation("; ".join(problems))

    # running

    def run(self) -> RunResult:
        if not self._prepared:
            self._prepare()
        status = RunStatus.QUIESCENT
        diagnostics: list[str] = []
        try:
            self.net.run_until(self.duration, observer=self._observe, idle=False)
            if not self.net.is_quiescent():
                status = RunStatus.DURATION_CAP
                diagnostics.append(f"duration cap {self.duration} reached with events pending")
                logger.warning(f"{self.scenario.name}: duration cap {self.duration} reached")
            else:
                self._check_convergence()
        except InvariantViolation as exc:
            logger.error(f"{self.scenario.name}: invariant violated at t={self.net.now}: {exc}")
            status = RunStatus.INVARIANT_VIOLATION
            diagnostics.append(str(exc))
        logger.info(
            f"{self.scenario.name} (seed {self.seed}) finished at t={self.net.now}: "
            f"{status.value}, {len(self.recorder.events)} events"
        )
        return RunResult(
            scenario=self.scenario.name,
            seed=self.seed,
            duration=self.duration,
            status=status,
            final_tick=int(self.net.now),
            events=list(self.recorder.events),
            diagnostics=diagnostics,
        )


def run_scenario(
    scenario: ScenarioFile,
    seed: int | None = None,
    duration: int | None = None,
    inject: Iterable[str] = (),
    config: SimulationConfig | None = None,
) -> RunResult:
    """Parse ``--inject`` specs against the scenario's defaults and run it."""
    config = config or SimulationConfig.from_settings()
    fallback_tick = scenario.injection_defaults.get("tick", config.with_overrides(dict(scenario.config)).injection_tick)
    extra = [parse_injection(spec, scenario.injection_defaults, fallback_tick) for spec in inject]
    unknown = [
        f"--inject: unknown holon '{injection.holon}'"
        for injection in extra
        if injection.holon != EXTERNAL and injection.holon not in scenario.holon_ids
    ]
    if unknown:
        raise UnresolvedReference(unknown)
    if extra:
        scenario = scenario.with_injections(extra)
    return Simulation(scenario, config=config, seed=seed, duration=duration).run()

