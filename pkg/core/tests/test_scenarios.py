import json

from django.test import SimpleTestCase

from core import scenario
from core.exceptions import ParseError, UnresolvedReference
from core.holons import EXTERNAL
from core.runner import run_scenario
from core.simnet import LinkQuality
from core.values import Location


def minimal(**extra):
    raw = {
        "name": "tiny",
        "holons": [{"id": "A"}, {"id": "B"}],
        "compositions": [{"id": "AB", "candidates": ["A", "B"]}],
    }
    raw.update(extra)
    return raw


def loads(raw, name="tiny"):
    return scenario.loads(json.dumps(raw), name)


class BundledScenarioTests(SimpleTestCase):
    def test_sar_summary(self):
        sar = scenario.load("sar")
        self.assertEqual(
            sar.summary(),
            {"holons": 4, "compositions": 1, "collaborations": 1, "behaviours": 4, "injections": 0},
        )
        self.assertEqual(sar.holon_ids, ["C2", "FireDpt", "HealthDpt", "PoliceDpt"])
        self.assertEqual(sar.seed, 42)
        self.assertEqual(sar.injection_defaults["holon"], "C2")

    def test_resolve_path_finds_bundled_names(self):
        self.assertEqual(scenario.resolve_path("sar"), scenario.SCENARIO_DIR / "sar.scenario")
        self.assertEqual(scenario.resolve_path("sar.scenario"), scenario.SCENARIO_DIR / "sar.scenario")

    def test_landslide_extends_sar(self):
        landslide = scenario.load("sar_landslide")
        self.assertEqual(landslide.name, "sar_landslide")
        self.assertEqual(len(landslide.holons), 4)
        self.assertEqual(len(landslide.injections), 1)
        self.assertEqual(landslide.injections[0].payload["loc"], Location(61.5, 23.8))
        self.assertEqual(landslide.link_schedule[0].quality, LinkQuality.WEAK)
        # merged key by key
        self.assertEqual(landslide.injection_defaults["tick"], 40)

    def test_suspend_schedules_availability(self):
        suspend = scenario.load("sar_suspend")
        changes = [(change.tick, change.available) for change in suspend.availability_schedule]
        self.assertEqual(changes, [(55, False), (65, True)])

    def test_missing_file(self):
        with self.assertRaises(ParseError):
            scenario.load("no_such_scenario")


class LoadErrorTests(SimpleTestCase):
    def test_json_syntax_error_is_located(self):
        with self.assertRaises(ParseError) as ctx:
            scenario.loads('{"name": ', "broken")
        self.assertTrue(ctx.exception.errors[0].startswith("broken:1:"))

    def test_schema_error_names_the_path(self):
        with self.assertRaises(ParseError) as ctx:
            loads({"holons": [{"name": "x"}]})
        self.assertIn("$.holons[0]", str(ctx.exception))

    def test_unknown_candidate(self):
        raw = minimal(compositions=[{"id": "AB", "candidates": ["A", "Z"]}])
        with self.assertRaises(UnresolvedReference) as ctx:
            loads(raw)
        self.assertEqual(ctx.exception.errors, ["compositions[0].candidates: unknown holon 'Z'"])

    def test_unknown_collaboration_composition(self):
        raw = minimal(collaborations=[{"id": "c", "composition": "XY", "participants": ["A"]}])
        with self.assertRaises(UnresolvedReference) as ctx:
            loads(raw)
        self.assertIn("unknown composition 'XY'", str(ctx.exception))

    def test_bad_trigger_is_a_parse_error_with_location(self):
        behaviour = {
            "name": "b",
            "trigger": "a > > b",
            "roles": [{"name": "r", "requires": ["x"]}],
            "body": [{"action": "return", "role": "r"}],
        }
        raw = minimal(collaborations=[{"id": "c", "composition": "AB", "participants": ["A"], "behaviours": [behaviour]}])
        with self.assertRaises(ParseError) as ctx:
            loads(raw)
        self.assertIn("line 1", str(ctx.exception))
        self.assertIn("behaviours[0] (b)", str(ctx.exception))

    def test_unsorted_injections(self):
        raw = minimal(injections=[{"tick": 9, "kind": "SOS"}, {"tick": 3, "kind": "SOS"}])
        with self.assertRaises(ParseError) as ctx:
            loads(raw)
        self.assertIn("injections: entries must be sorted by tick", ctx.exception.errors)

    def test_duplicate_holon(self):
        with self.assertRaises(ParseError):
            loads(minimal(holons=[{"id": "A"}, {"id": "A"}, {"id": "B"}]))

    def test_every_problem_is_reported(self):
        raw = minimal(
            compositions=[{"id": "AB", "candidates": ["A", "Y", "Z"]}],
            injections=[{"tick": 2, "kind": "SOS"}, {"tick": 1, "kind": "SOS"}],
        )
        with self.assertRaises(ParseError) as ctx:
            loads(raw)
        self.assertEqual(len(ctx.exception.errors), 3)


class InjectionSpecTests(SimpleTestCase):
    def test_full_spec(self):
        injection = scenario.parse_injection("@40 C2:SOS type=missing person loc=61.5,23.8", {}, 10)
        self.assertEqual(injection.tick, 40)
        self.assertEqual(injection.holon, "C2")
        self.assertEqual(injection.kind, "SOS")
        self.assertEqual(injection.payload, {"type": "missing person", "loc": Location(61.5, 23.8)})

    def test_defaults_fill_the_gaps(self):
        defaults = {"holon": "C2", "payload": {"loc": [1.0, 2.0]}}
        injection = scenario.parse_injection("SOS type=wildfire", defaults, 10)
        self.assertEqual(injection.tick, 10)
        self.assertEqual(injection.holon, "C2")
        self.assertEqual(injection.payload, {"type": "wildfire", "loc": Location(1.0, 2.0)})

    def test_bare_kind_goes_to_external(self):
        injection = scenario.parse_injection("Ping", {}, 3)
        self.assertEqual((injection.tick, injection.holon, injection.kind, dict(injection.payload)), (3, EXTERNAL, "Ping", {}))

    def test_bad_spec(self):
        with self.assertRaises(ParseError):
            scenario.parse_injection("SOS wildfire", {}, 10)
        with self.assertRaises(ParseError):
            scenario.parse_injection("", {}, 10)

    def test_with_injections_keeps_order(self):
        sar = scenario.load("sar_landslide")
        extra = scenario.parse_injection("@5 C2:Ping", {}, 0)
        self.assertEqual([i.tick for i in sar.with_injections([extra]).injections], [5, 40])

    def test_unknown_inject_holon(self):
        with self.assertRaises(UnresolvedReference):
            run_scenario(scenario.load("sar"), inject=["Ghost:SOS type=wildfire"])
