import itertools
import random

from django.test import SimpleTestCase

from core.behaviours import (
    BehaviourDef,
    Insufficient,
    InstanceStatus,
    RoleBinding,
    action_from_json,
    bind_roles,
    eligible_resources,
    fuel_cost,
)
from core.collaboration import MediatorPolicy
from core.exceptions import InstanceNotRunning
from core.trace import TraceKind
from core.values import Location

from .support import build_stack, formed_collaboration

C2 = {
    "id": "C2",
    "base": [61.0, 23.0],
    "scores": {"connectivity": 1.0},
    "resources": [
        {
            "name": "searchPlane",
            "capabilities": [
                {"name": "search", "attributes": {"fuelCost": 1, "speed": 0.1}},
                {"name": "waterTank", "attributes": {"waterLevel": "full"}},
                {"name": "waterSprinkler"},
            ],
        },
        {
            "name": "rescueHelicopter",
            "capabilities": [
                {"name": "search", "attributes": {"fuelCost": 3, "speed": 0.2}},
                {"name": "waterTank", "attributes": {"waterLevel": "full"}},
                {"name": "waterSprinkler"},
                {"name": "transport"},
            ],
        },
    ],
}

WATER_CARRIER = {
    "name": "wildfireResp",
    "trigger": 'sosCall.type is "wildfire"',
    "roles": [
        {
            "name": "waterCarrier",
            "requires": [{"capability": "waterTank", "where": {"waterLevel": "full"}}, "waterSprinkler"],
        }
    ],
    "body": [{"action": "move", "role": "waterCarrier", "to": "sosCall.loc"}],
}


class DefinitionTests(SimpleTestCase):
    def test_action_keywords(self):
        self.assertEqual(action_from_json({"action": "return", "role": "r"}).name, "ReturnToBase")
        self.assertEqual(action_from_json({"action": "alert", "target": "e"}).targets, ("e",))
        deploy = action_from_json({"action": "deploy_mav", "at": "sosCall.loc"})
        self.assertEqual(deploy.role, "relay")
        with self.assertRaises(ValueError):
            action_from_json({"action": "fly", "role": "r"})

    def test_unresolved_roles(self):
        behaviour = BehaviourDef.from_json(
            {
                "name": "b",
                "trigger": "go",
                "roles": [{"name": "medic", "requires": ["medical"]}],
                "body": [
                    {"action": "foreach_async", "var": "e", "over": ["medic"], "body": [{"action": "alert", "target": "e"}]},
                    {"action": "if", "condition": "late", "then": [{"action": "return", "role": "ghost"}]},
                    {"action": "alert", "target": "e"},
                ],
            }
        )
        self.assertEqual(behaviour.unresolved_roles(), ["ghost", "e"])

    def test_roles_need_predicates_and_unique_names(self):
        with self.assertRaises(ValueError):
            BehaviourDef.from_json({"name": "b", "trigger": "go", "roles": [{"name": "r", "requires": []}]})
        with self.assertRaises(ValueError):
            BehaviourDef.from_json(
                {"name": "b", "trigger": "go", "roles": [{"name": "r", "requires": ["x"]}, {"name": "r", "requires": ["y"]}]}
            )


class BindRolesTests(SimpleTestCase):
    def setUp(self):
        self.stack = build_stack([C2, {"id": "FireDpt"}])
        self.registry = self.stack.registry

    def bind(self, raw):
        return bind_roles(BehaviourDef.from_json(raw), self.registry, ["C2", "FireDpt"])

    def test_cheapest_resource_wins(self):
        binding = self.bind(WATER_CARRIER)
        self.assertIsInstance(binding, RoleBinding)
        self.assertEqual(binding["waterCarrier"], ("C2", "searchPlane"))

    def test_only_the_helicopter_transports(self):
        binding = self.bind(
            {"name": "rescue", "trigger": "go", "roles": [{"name": "rescuer", "requires": ["transport"]}]}
        )
        self.assertEqual(binding["rescuer"], ("C2", "rescueHelicopter"))

    def test_empty_tanks_leave_the_role_unbound(self):
        for resource in ("searchPlane", "rescueHelicopter"):
            self.registry.get("C2").resources[resource].capabilities["waterTank"].attributes["waterLevel"] = "empty"
        self.assertEqual(self.bind(WATER_CARRIER), Insufficient(("waterCarrier",)))

    def test_engaged_resources_are_skipped(self):
        self.registry.engage("C2", "searchPlane", "i9")
        binding = self.bind(WATER_CARRIER)
        self.assertEqual(binding["waterCarrier"], ("C2", "rescueHelicopter"))

    def test_roles_get_distinct_resources(self):
        raw = {
            "name": "pair",
            "trigger": "go",
            "roles": [{"name": "first", "requires": ["search"]}, {"name": "second", "requires": ["search"]}],
        }
        binding = self.bind(raw)
        # equal total cost either way; the tie goes to the lexicographically smaller assignment
        self.assertEqual(binding["first"], ("C2", "rescueHelicopter"))
        self.assertEqual(binding["second"], ("C2", "searchPlane"))
        raw["roles"].append({"name": "third", "requires": ["search"]})
        self.assertIsInstance(self.bind(raw), Insufficient)

    def test_matches_exhaustive_enumeration(self):
        rng = random.Random(99)
        capabilities = ("a", "b", "c")
        for round_number in range(150):
            holons = []
            for index in range(rng.randint(1, 3)):
                resources = []
                for r in range(rng.randint(0, 3)):
                    cost = rng.randint(0, 4)
                    names = rng.sample(capabilities, rng.randint(1, 3))
                    resources.append(
                        {
                            "name": f"r{r}",
                            "capabilities": [{"name": name, "attributes": {"fuelCost": cost}} for name in names],
                        }
                    )
                holons.append({"id": f"H{index}", "resources": resources})
            stack = build_stack(holons)
            roles = [
                {"name": f"role{i}", "requires": rng.sample(capabilities, rng.randint(1, 2))}
                for i in range(rng.randint(1, 3))
            ]
            behaviour = BehaviourDef.from_json({"name": f"b{round_number}", "trigger": "go", "roles": roles})
            participants = [holon["id"] for holon in holons]

            options = [eligible_resources(role, stack.registry, participants) for role in behaviour.roles]
            best, best_cost = None, None
            for combination in itertools.product(*options):
                if len(set(combination)) != len(combination):
                    continue
                cost = sum(fuel_cost(stack.registry.get(h).resources[r]) for h, r in combination)
                if best is None or cost < best_cost:
                    best, best_cost = combination, cost

            result = bind_roles(behaviour, stack.registry, participants)
            with self.subTest(round=round_number):
                if best is None:
                    self.assertIsInstance(result, Insufficient)
                else:
                    self.assertEqual(tuple(target for _role, target in result.items()), best)


class EngineTests(SimpleTestCase):
    HAUL = {
        "name": "haul",
        "trigger": 'job is "go"',
        "roles": [{"name": "driver", "requires": ["haul"]}],
        "body": [
            {"action": "move", "role": "driver", "to": "target"},
            {"action": "invoke", "role": "driver", "capability": "haul", "duration": 3},
            {"action": "set", "path": "job", "value": '"done"', "role": "driver"},
            {"action": "return", "role": "driver"},
        ],
    }

    def setUp(self):
        depot = {
            "id": "Depot",
            "base": [0.0, 0.0],
            "scores": {"connectivity": 1.0},
            "resources": [{"name": "truck", "capabilities": [{"name": "haul", "attributes": {"speed": 1.0}}]}],
        }
        self.stack = build_stack([depot, {"id": "Yard", "scores": {"connectivity": 0.5}}])

    def collaborate(self, *behaviours):
        collab = formed_collaboration(
            self.stack,
            ["Depot", "Yard"],
            "Works",
            MediatorPolicy.from_json(None),
            behaviours=[BehaviourDef.from_json(raw) for raw in behaviours],
            collab_id="works",
        )
        self.t0 = self.stack.net.now
        return collab

    def start_job(self):
        self.stack.hub.write_shared("works", "Depot", "target", Location(3.0, 4.0))
        self.stack.hub.write_shared("works", "Depot", "job", "go")

    def actions(self) -> list[tuple[int, str]]:
        """Executed actions with ticks counted from the formation of the collaboration."""
        return [(event.tick - self.t0, event.get("action")) for event in self.stack.recorder.of_kind(TraceKind.ACTION_EXECUTED)]

    def test_instance_runs_to_completion(self):
        self.collaborate(self.HAUL)
        self.start_job()
        self.stack.net.run_until(None)

        self.assertEqual(
            self.actions(),
            [(5, "Move"), (8, "Invoke"), (8, "SetShared"), (13, "ReturnToBase")],
        )
        completed = self.stack.recorder.of_kind(TraceKind.INSTANCE_COMPLETED, behaviour="haul")
        self.assertEqual([event.tick - self.t0 for event in completed], [13])
        self.assertEqual(len(self.stack.recorder.of_kind(TraceKind.TRIGGER_FIRED)), 1)
        self.assertEqual(self.stack.hub.get("works").read("job"), "done")
        self.assertEqual(self.stack.engine.live(), [])
        self.assertIsNone(self.stack.registry.get("Depot").resources["truck"].engaged_by)
        self.assertEqual(self.stack.engine.audit(), [])

    def test_stepping_by_hand_matches_the_scheduled_run(self):
        self.collaborate(self.HAUL)
        self.start_job()
        stepped = []

        def step_once():
            for instance in self.stack.engine.instances_of("haul"):
                if not stepped and instance.status is InstanceStatus.RUNNING and instance.threads[0].ready:
                    stepped.append(self.stack.engine.step(instance))

        self.stack.net.run_until(None, observer=step_once)
        self.assertEqual(stepped, [InstanceStatus.RUNNING])
        self.assertEqual(
            self.actions(),
            [(5, "Move"), (8, "Invoke"), (8, "SetShared"), (13, "ReturnToBase")],
        )

        instance = self.stack.engine.instances_of("haul")[0]
        with self.assertRaises(InstanceNotRunning):
            self.stack.engine.step(instance)

    def test_unavailable_capability_suspends_and_resumes(self):
        self.collaborate(self.HAUL)
        self.start_job()
        self.stack.net.schedule(6, self.stack.registry.set_capability_available, "Depot", "haul", False)
        self.stack.net.schedule(10, self.stack.registry.set_capability_available, "Depot", "haul", True)
        self.stack.net.run_until(None)

        suspended = self.stack.recorder.of_kind(TraceKind.INSTANCE_SUSPENDED)
        resumed = self.stack.recorder.of_kind(TraceKind.INSTANCE_RESUMED)
        self.assertEqual([(e.tick - self.t0, e.get("pc"), e.get("reason")) for e in suspended], [(6, "1", "capability_unavailable")])
        self.assertEqual([(e.tick - self.t0, e.get("pc"), e.get("suspended_for")) for e in resumed], [(10, "1", "4")])
        self.assertEqual(self.actions(), [(5, "Move"), (13, "Invoke"), (13, "SetShared"), (18, "ReturnToBase")])
        instance = self.stack.engine.instances_of("haul")[0]
        self.assertEqual(instance.status, InstanceStatus.COMPLETED)

    def test_trigger_waits_for_a_bindable_resource(self):
        self.collaborate(self.HAUL)
        self.stack.registry.set_capability_available("Depot", "haul", False)
        self.start_job()
        self.stack.net.schedule(2, self.stack.registry.set_capability_available, "Depot", "haul", True)
        self.stack.net.run_until(None)

        deferred = self.stack.recorder.of_kind(TraceKind.TRIGGER_DEFERRED, behaviour="haul")
        fired = self.stack.recorder.of_kind(TraceKind.TRIGGER_FIRED, behaviour="haul")
        self.assertEqual([(e.tick - self.t0, e.get("missing")) for e in deferred], [(0, "driver")])
        self.assertEqual([e.tick - self.t0 for e in fired], [2])

    def test_same_state_fires_once(self):
        self.collaborate(self.HAUL)
        self.start_job()
        self.stack.hub.write_shared("works", "Depot", "target", Location(3.0, 4.0))
        self.stack.net.run_until(None)
        self.assertEqual(len(self.stack.engine.instances_of("haul")), 1)

    def test_await_times_out(self):
        waiting = {
            "name": "wait",
            "trigger": 'job is "wait"',
            "body": [
                {"action": "await", "condition": "flag is true", "timeout": 4},
                {"action": "set", "path": "after", "value": "1"},
            ],
        }
        self.collaborate(waiting)
        self.stack.hub.write_shared("works", "Depot", "job", "wait")
        self.stack.net.run_until(None)
        timed_out = self.stack.recorder.of_kind(TraceKind.ACTION_TIMED_OUT, behaviour="wait")
        self.assertEqual([event.tick - self.t0 for event in timed_out], [4])
        self.assertEqual(self.stack.hub.get("works").read("after"), 1)

    def test_await_wakes_on_shared_change(self):
        waiting = {
            "name": "wait",
            "trigger": 'job is "wait"',
            "body": [{"action": "await", "condition": "flag is true", "timeout": 4}],
        }
        self.collaborate(waiting)
        self.stack.hub.write_shared("works", "Depot", "job", "wait")
        self.stack.net.schedule(2, self.stack.hub.write_shared, "works", "Depot", "flag", True)
        self.stack.net.run_until(None)
        self.assertEqual(self.actions(), [(2, "AwaitState")])
        self.assertEqual(self.stack.recorder.of_kind(TraceKind.ACTION_TIMED_OUT), [])

    def test_move_to_a_non_location_aborts(self):
        self.collaborate(self.HAUL)
        self.stack.hub.write_shared("works", "Depot", "job", "go")
        self.stack.net.run_until(None)
        aborted = self.stack.recorder.of_kind(TraceKind.INSTANCE_ABORTED, behaviour="haul")
        self.assertEqual(aborted[0].get("reason"), "invalid_destination")
        self.assertIsNone(self.stack.registry.get("Depot").resources["truck"].engaged_by)
