"""Small builders shared by the test modules."""

import random
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any

from core.behaviours import BehaviourEngine
from core.collaboration import Collaboration, CollaborationHub, MediatorPolicy
from core.conf import SimulationConfig
from core.crypto import LedgerCryptoProvider
from core.hcfw import CompositionFramework
from core.holons import HolonRegistry
from core.simnet import SimNetwork
from core.trace import TraceRecorder

SAR_TEAM = ("C2", "FireDpt", "HealthDpt", "PoliceDpt")


@dataclass
class Stack:
    config: SimulationConfig
    recorder: TraceRecorder
    crypto: LedgerCryptoProvider
    net: SimNetwork
    registry: HolonRegistry
    hcfw: CompositionFramework
    hub: CollaborationHub
    engine: BehaviourEngine

    def kinds(self) -> list[str]:
        return [event.kind.value for event in self.recorder.events]


def make_config(**overrides) -> SimulationConfig:
    return SimulationConfig().with_overrides(overrides)


def build_stack(
    holons: Iterable[Mapping[str, Any]] = (),
    seed: int = 7,
    autonomous: bool = True,
    **overrides,
) -> Stack:
    config = make_config(**overrides)
    recorder = TraceRecorder()
    crypto = LedgerCryptoProvider(random.Random(f"keys-{seed}"))
    net = SimNetwork(seed, config, recorder, crypto)
    registry = HolonRegistry(net, recorder)
    for descriptor in holons:
        registry.register_holon(descriptor)
    hcfw = CompositionFramework(registry, net, crypto, recorder, autonomous=autonomous)
    hub = CollaborationHub(registry, net, recorder, hcfw, config)
    engine = BehaviourEngine(registry, net, recorder, hub, config)
    return Stack(config, recorder, crypto, net, registry, hcfw, hub, engine)


def plain_holons(*holon_ids: str, **scores: float) -> list[dict[str, Any]]:
    return [{"id": holon_id, "scores": dict(scores)} for holon_id in holon_ids]


def sar_team() -> list[dict[str, Any]]:
    connectivity = {"C2": 1.0, "FireDpt": 0.6, "HealthDpt": 0.5, "PoliceDpt": 0.7}
    return [
        {"id": holon_id, "scores": {"connectivity": value, "compute": 0.5, "battery": 0.5}}
        for holon_id, value in connectivity.items()
    ]


def formed_collaboration(
    stack: Stack,
    members: Iterable[str] = SAR_TEAM,
    composition_id: str = "SAR",
    policy: MediatorPolicy | None = None,
    **kwargs,
) -> Collaboration:
    """Initialize, compose (everyone votes yes) and form a collaboration over ``members``."""
    members = list(members)
    for holon_id in members:
        if not stack.hcfw.is_initialized(holon_id):
            stack.hcfw.initialize(holon_id)
    stack.hcfw.propose_composition(members[0], members, composition_id=composition_id)
    stack.net.run_until(None)
    return stack.hub.form_collaboration(
        composition_id, members, policy or MediatorPolicy.from_json(None), **kwargs
    )
