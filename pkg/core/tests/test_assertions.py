from django.test import SimpleTestCase

from core.assertions import Absent, Count, Exists, Order, parse_assertion, parse_assertions, verify
from core.exceptions import MalformedAssertion
from core.trace import TraceKind, TraceRecorder


def sample_trace():
    clock = iter(range(100))
    recorder = TraceRecorder(clock=lambda: next(clock))
    recorder.emit(TraceKind.COMPOSITION_FINALIZED, composition="SAR", outcome="accepted")
    recorder.emit(TraceKind.MEDIATOR_SELECTED, collab="sarCollab", mediator="C2", reason="formation")
    recorder.emit(TraceKind.TRIGGER_FIRED, behaviour="search", instance="i1")
    recorder.emit(TraceKind.ROLE_BOUND, role="searcher", resource="searchPlane", holon="C2")
    recorder.emit(TraceKind.TRIGGER_FIRED, behaviour="rescue", instance="i2")
    recorder.emit(TraceKind.SENSATION_EMITTED, kind="SOS", type="missing person")
    return recorder.events


class ParseTests(SimpleTestCase):
    def test_forms(self):
        self.assertIsInstance(parse_assertion("exists: TriggerFired{behaviour=search}"), Exists)
        self.assertIsInstance(parse_assertion("assert absent TriggerFired"), Absent)
        count = parse_assertion("count: TriggerFired >= 2")
        self.assertIsInstance(count, Count)
        self.assertEqual((count.op, count.expected), (">=", 2))
        order = parse_assertion("order: TriggerFired BEFORE RoleBound BEFORE TriggerFired")
        self.assertIsInstance(order, Order)
        self.assertEqual(len(order.selectors), 3)

    def test_selector_attributes(self):
        selector = parse_assertion('exists: SensationEmitted{type="missing person", SOS}').selector
        self.assertEqual(selector.attributes, (("type", "missing person"),))
        self.assertEqual(selector.bare, ("SOS",))
        self.assertEqual(str(selector), "SensationEmitted{type=missing person, SOS}")

    def test_comments_and_blank_lines(self):
        parsed = parse_assertions("# run: something\n\nexists: TriggerFired\n  # more\nabsent: MAVDeployed\n")
        self.assertEqual([assertion.line for assertion in parsed], [3, 5])

    def test_unknown_kind(self):
        with self.assertRaises(MalformedAssertion) as ctx:
            parse_assertions("exists: TriggerFired\nexists: Nonsense{a=b}")
        self.assertEqual(ctx.exception.line, 2)
        self.assertIn("Nonsense", str(ctx.exception))

    def test_syntax_error(self):
        with self.assertRaises(MalformedAssertion) as ctx:
            parse_assertion("count: TriggerFired", line=7)
        self.assertEqual(ctx.exception.line, 7)


class VerifyTests(SimpleTestCase):
    def check(self, source):
        report = verify(sample_trace(), parse_assertions(source))
        return report.passed

    def test_exists_and_absent(self):
        self.assertTrue(self.check("exists: TriggerFired{behaviour=search}"))
        self.assertFalse(self.check("exists: TriggerFired{behaviour=wildfireResp}"))
        self.assertTrue(self.check("absent: TriggerFired{behaviour=wildfireResp}"))
        self.assertFalse(self.check("absent: RoleBound{resource=searchPlane}"))

    def test_bare_value_matches_any_attribute(self):
        self.assertTrue(self.check("exists: RoleBound{searchPlane}"))
        self.assertFalse(self.check("exists: RoleBound{rescueHelicopter}"))

    def test_count(self):
        self.assertTrue(self.check("count: TriggerFired = 2"))
        self.assertTrue(self.check("count: TriggerFired{behaviour=rescue} == 1"))
        self.assertFalse(self.check("count: TriggerFired < 2"))
        self.assertTrue(self.check("count: MAVDeployed = 0"))

    def test_order_is_a_subsequence(self):
        self.assertTrue(
            self.check("order: CompositionFinalized BEFORE MediatorSelected BEFORE TriggerFired{behaviour=rescue}")
        )
        self.assertFalse(self.check("order: TriggerFired{behaviour=rescue} BEFORE RoleBound"))
        # each step consumes its match
        self.assertTrue(self.check("order: TriggerFired BEFORE TriggerFired"))
        self.assertFalse(self.check("order: RoleBound BEFORE RoleBound"))

    def test_report(self):
        report = verify(sample_trace(), parse_assertions("exists: TriggerFired\nabsent: TriggerFired"))
        self.assertFalse(report.passed)
        self.assertEqual([failure.assertion.line for failure in report.failures], [2])
        rendered = report.render()
        self.assertIn("PASS line 1", rendered)
        self.assertIn("FAIL line 2", rendered)
        self.assertTrue(rendered.endswith("1/2 assertion(s) passed"))
