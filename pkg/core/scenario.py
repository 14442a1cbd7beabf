"""
Scenario files.

A scenario is a JSON document checked against ``scenarios/scenario.schema.json``.
A scenario may name another file in ``extends``; the base is loaded first and
the overlay's top-level keys replace it, except ``config`` and
``injection_defaults`` which are merged key by key.
"""

import json
import logging
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any

from jsonschema import Draft202012Validator

from .behaviours import BehaviourDef
from .collaboration import MediatorPolicy, StateBinding
from .exceptions import ConditionError, ParseError, UnresolvedReference
from .hcfw import DEFAULT_TRUSTED_ENTITY, MembershipRule
from .holons import EXTERNAL, holon_from_descriptor
from .simnet import LinkQuality
from .values import Value, from_json, parse_text

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"
SCHEMA_PATH = SCENARIO_DIR / "scenario.schema.json"
MERGED_KEYS = ("config", "injection_defaults")

INJECT_SPEC = re.compile(r"^\s*(?:@(?P<tick>\d+)\s+)?(?:(?P<holon>[\w.-]+):)?(?P<kind>\w+)(?P<rest>.*)$")
INJECT_PAIR = re.compile(r"(\w+)=(.*?)(?=\s+\w+=|$)")


@dataclass(frozen=True)
class Injection:
    tick: int
    holon: str
    kind: str
    payload: Mapping[str, Value] = field(default_factory=dict)


@dataclass(frozen=True)
class LinkChange:
    tick: int
    a: str
    b: str
    quality: LinkQuality


@dataclass(frozen=True)
class AvailabilityChange:
    tick: int
    holon: str
    capability: str
    available: bool = True
    remove: bool = False


@dataclass(frozen=True)
class CompositionSpec:
    composition_id: str
    initiator: str
    candidates: tuple[str, ...]
    tick: int = 0
    voting: Mapping[str, Any] = field(default_factory=dict)
    rules: tuple[MembershipRule, ...] = ()


@dataclass(frozen=True)
class PairSpec:
    """Two compositions to merge, or two collaborations to link."""

    a: str
    b: str
    target_id: str
    tick: int = 0


@dataclass(frozen=True)
class CollaborationSpec:
    collab_id: str
    composition: str
    participants: tuple[str, ...]
    policy: MediatorPolicy
    bindings: tuple[StateBinding, ...] = ()
    behaviours: tuple[BehaviourDef, ...] = ()


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    path: Path | None
    seed: int
    duration: int | None
    trusted_entity: str
    config: Mapping[str, Any]
    nodes: tuple[str, ...]
    holons: tuple[Mapping[str, Any], ...]
    compositions: tuple[CompositionSpec, ...]
    merges: tuple[PairSpec, ...]
    links: tuple[PairSpec, ...]
    collaborations: tuple[CollaborationSpec, ...]
    injections: tuple[Injection, ...]
    link_schedule: tuple[LinkChange, ...]
    availability_schedule: tuple[AvailabilityChange, ...]
    injection_defaults: Mapping[str, Any] = field(default_factory=dict)

    @property
    def holon_ids(self) -> list[str]:
        return [descriptor["id"] for descriptor in self.holons]

    @property
    def behaviour_count(self) -> int:
        return sum(len(spec.behaviours) for spec in self.collaborations)

    def summary(self) -> dict[str, int]:
        return {
            "holons": len(self.holons),
            "compositions": len(self.compositions),
            "collaborations": len(self.collaborations),
            "behaviours": self.behaviour_count,
            "injections": len(self.injections),
        }

    def with_injections(self, extra: Iterable[Injection]) -> "ScenarioFile":
        injections = sorted(self.injections + tuple(extra), key=lambda injection: injection.tick)
        return replace(self, injections=tuple(injections))


@lru_cache(maxsize=1)
def _validator() -> Draft202012Validator:
    schema = json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def resolve_path(name: str | Path) -> Path:
    """A path as given, or the name of a bundled scenario."""
    path = Path(name)
    if path.exists():
        return path
    for candidate in (SCENARIO_DIR / path, SCENARIO_DIR / f"{path}.scenario"):
        if candidate.exists():
            return candidate
    return path


def _read(path: Path, seen: frozenset[Path] = frozenset()) -> dict[str, Any]:
    path = path.resolve()
    if path in seen:
        raise ParseError([f"{path}: circular extends"])
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError([f"{path}: {exc.strerror or exc}"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    if not isinstance(raw, dict):
        raise ParseError([f"{path}: a scenario must be a JSON object"])
    base_name = raw.pop("extends", None)
    if base_name:
        base = _read(path.parent / base_name, seen | {path})
        merged = dict(base)
        for key, value in raw.items():
            merged[key] = {**base.get(key, {}), **value} if key in MERGED_KEYS else value
        raw = merged
    return raw


def load(path: str | Path) -> ScenarioFile:
    path = resolve_path(path)
    raw = _read(Path(path))
    return build(raw, path)


def loads(text: str, name: str = "<string>") -> ScenarioFile:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError([f"{name}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    if not isinstance(raw, dict):
        raise ParseError([f"{name}: a scenario must be a JSON object"])
    return build(raw, None, name)


def _condition_problem(where: str, exc: ConditionError) -> str:
    if exc.line is not None:
        return f"{where}: line {exc.line} column {exc.column}: {exc}"
    return f"{where}: {exc}"


def _check_sorted(items: list, label: str, problems: list[str]) -> None:
    ticks = [item.tick for item in items]
    if ticks != sorted(ticks):
        problems.append(f"{label}: entries must be sorted by tick")


def build(raw: Mapping[str, Any], path: Path | None, name: str | None = None) -> ScenarioFile:
    """Validate a decoded scenario and resolve every reference in it."""
    name = name or raw.get("name") or (Path(path).stem if path else "scenario")
    errors = sorted(_validator().iter_errors(raw), key=lambda error: error.json_path)
    if errors:
        raise ParseError([f"{name}: {error.json_path}: {error.message}" for error in errors])

    problems: list[str] = []
    unresolved: list[str] = []

    holon_descriptors = tuple(raw.get("holons", ()))
    holons = {}
    for index, descriptor in enumerate(holon_descriptors):
        if descriptor["id"] in holons:
            problems.append(f"holons[{index}]: duplicate holon id '{descriptor['id']}'")
            continue
        try:
            holons[descriptor["id"]] = holon_from_descriptor(descriptor)
        except (TypeError, ValueError) as exc:
            problems.append(f"holons[{index}]: {exc}")
    trusted_entity = raw.get("trusted_entity", DEFAULT_TRUSTED_ENTITY)
    nodes = tuple(raw.get("nodes", ()))
    known_nodes = set(holons) | {trusted_entity} | set(nodes)

    compositions = []
    composition_ids: set[str] = set()
    for index, item in enumerate(raw.get("compositions", ())):
        where = f"compositions[{index}]"
        for candidate in item["candidates"]:
            if candidate not in holons:
                unresolved.append(f"{where}.candidates: unknown holon '{candidate}'")
        initiator = item.get("initiator", item["candidates"][0])
        if initiator not in item["candidates"]:
            unresolved.append(f"{where}.initiator: '{initiator}' is not a candidate")
        rules = []
        for rule_index, rule in enumerate(item.get("rules", ())):
            try:
                rules.append(MembershipRule.from_json(rule))
            except ConditionError as exc:
                problems.append(_condition_problem(f"{where}.rules[{rule_index}].when", exc))
        voting = {
            key: item[key] for key in ("formation_threshold", "change_threshold", "vote_timeout") if key in item
        }
        if item["id"] in composition_ids or item["id"] in holons:
            problems.append(f"{where}: duplicate id '{item['id']}'")
        composition_ids.add(item["id"])
        compositions.append(
            CompositionSpec(item["id"], initiator, tuple(item["candidates"]), item.get("tick", 0), voting, tuple(rules))
        )

    merges = []
    for index, item in enumerate(raw.get("merges", ())):
        for key in ("a", "b"):
            if item[key] not in composition_ids:
                unresolved.append(f"merges[{index}].{key}: unknown composition '{item[key]}'")
        target = item.get("id", f"{item['a']}+{item['b']}")
        composition_ids.add(target)
        merges.append(PairSpec(item["a"], item["b"], target, item.get("tick", 0)))

    members_of = {spec.composition_id: set(spec.candidates) for spec in compositions}
    for merge in merges:
        members_of[merge.target_id] = members_of.get(merge.a, set()) | members_of.get(merge.b, set())

    collaborations = []
    collab_ids: set[str] = set()
    for index, item in enumerate(raw.get("collaborations", ())):
        where = f"collaborations[{index}]"
        if item["composition"] not in composition_ids:
            unresolved.append(f"{where}.composition: unknown composition '{item['composition']}'")
        for participant in item["participants"]:
            if participant not in holons:
                unresolved.append(f"{where}.participants: unknown holon '{participant}'")
            elif item["composition"] in members_of and participant not in members_of[item["composition"]]:
                unresolved.append(f"{where}.participants: '{participant}' is not a candidate of '{item['composition']}'")
        behaviours = []
        for behaviour_index, raw_behaviour in enumerate(item.get("behaviours", ())):
            label = f"{where}.behaviours[{behaviour_index}] ({raw_behaviour['name']})"
            try:
                behaviour = BehaviourDef.from_json(raw_behaviour)
            except ConditionError as exc:
                problems.append(_condition_problem(label, exc))
                continue
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"{label}: {exc}")
                continue
            for role in behaviour.unresolved_roles():
                unresolved.append(f"{label}: undeclared role '{role}'")
            behaviours.append(behaviour)
        names = [behaviour.name for behaviour in behaviours]
        if len(names) != len(set(names)):
            problems.append(f"{where}.behaviours: duplicate behaviour name")
        try:
            policy = MediatorPolicy.from_json(item.get("policy"))
        except ValueError as exc:
            problems.append(f"{where}.policy: {exc}")
            continue
        bindings = tuple(
            StateBinding.from_json(state_path, entry) for state_path, entry in sorted(item.get("state", {}).items())
        )
        collab_ids.add(item["id"])
        collaborations.append(
            CollaborationSpec(item["id"], item["composition"], tuple(item["participants"]), policy, bindings, tuple(behaviours))
        )

    links = []
    for index, item in enumerate(raw.get("links", ())):
        for key in ("a", "b"):
            if item[key] not in collab_ids:
                unresolved.append(f"links[{index}].{key}: unknown collaboration '{item[key]}'")
        links.append(PairSpec(item["a"], item["b"], item.get("id", f"{item['a']}+{item['b']}"), item.get("tick", 0)))

    defaults = dict(raw.get("injection_defaults", {}))
    injections = []
    for index, item in enumerate(raw.get("injections", ())):
        holon = item.get("holon", defaults.get("holon", EXTERNAL))
        if holon != EXTERNAL and holon not in holons:
            unresolved.append(f"injections[{index}].holon: unknown holon '{holon}'")
        payload = {key: from_json(value) for key, value in item.get("payload", {}).items()}
        injections.append(Injection(item["tick"], holon, item["kind"], payload))
    _check_sorted(injections, "injections", problems)

    link_schedule = []
    for index, item in enumerate(raw.get("link_schedule", ())):
        for key in ("a", "b"):
            if item[key] not in known_nodes:
                unresolved.append(f"link_schedule[{index}].{key}: unknown node '{item[key]}'")
        link_schedule.append(LinkChange(item["tick"], item["a"], item["b"], LinkQuality(item["quality"])))
    _check_sorted(link_schedule, "link_schedule", problems)

    availability = []
    for index, item in enumerate(raw.get("availability_schedule", ())):
        holon = holons.get(item["holon"])
        if holon is None:
            unresolved.append(f"availability_schedule[{index}].holon: unknown holon '{item['holon']}'")
        elif not holon.find_capabilities(item["capability"]):
            unresolved.append(
                f"availability_schedule[{index}].capability: '{item['holon']}' has no '{item['capability']}'"
            )
        availability.append(
            AvailabilityChange(
                item["tick"], item["holon"], item["capability"], item.get("available", True), item.get("remove", False)
            )
        )
    _check_sorted(availability, "availability_schedule", problems)

    if problems:
        raise ParseError(problems + unresolved)
    if unresolved:
        raise UnresolvedReference(unresolved)

    scenario = ScenarioFile(
        name=name,
        path=Path(path) if path else None,
        seed=raw.get("seed", 0),
        duration=raw.get("duration"),
        trusted_entity=trusted_entity,
        config=dict(raw.get("config", {})),
        nodes=nodes,
        holons=holon_descriptors,
        compositions=tuple(compositions),
        merges=tuple(merges),
        links=tuple(links),
        collaborations=tuple(collaborations),
        injections=tuple(injections),
        link_schedule=tuple(link_schedule),
        availability_schedule=tuple(availability),
        injection_defaults=defaults,
    )
    logger.debug(f"Loaded scenario {name}: {scenario.summary()}")
    return scenario


def parse_injection(spec: str, defaults: Mapping[str, Any], fallback_tick: int) -> Injection:
    """
    Parse ``[@TICK] [HOLON:]KIND key=value ...``. Values run up to the next
    ``key=`` so they may contain spaces; ``loc=lat,lon`` becomes a location.
    """
    match = INJECT_SPEC.match(spec)
    if not match:
        raise ParseError([f"--inject {spec!r}: expected '[@TICK] [HOLON:]KIND key=value ...'"])
    rest = match.group("rest").strip()
    payload = {key: from_json(value) for key, value in defaults.get("payload", {}).items()}
    if rest:
        pairs = INJECT_PAIR.findall(rest)
        if not pairs or not rest.startswith(pairs[0][0] + "="):
            raise ParseError([f"--inject {spec!r}: cannot read payload {rest!r}"])
        payload.update({key: parse_text(value.strip()) for key, value in pairs})
    tick = match.group("tick")
    return Injection(
        tick=int(tick) if tick is not None else defaults.get("tick", fallback_tick),
        holon=match.group("holon") or defaults.get("holon", EXTERNAL),
        kind=match.group("kind"),
        payload=payload,
    )
