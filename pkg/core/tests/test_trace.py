from django.test import SimpleTestCase

from core.exceptions import InvariantViolation, MalformedTrace
from core.messages import SharedWrite, decode
from core.trace import TraceEvent, TraceKind, TraceRecorder, format_trace, parse_trace, trace_digest
from core.values import Location, compare, format_value, parse_text, values_equal


class ValueModelTests(SimpleTestCase):
    def test_decimals_compare_with_tolerance(self):
        self.assertTrue(values_equal(0.1 + 0.2, 0.3))
        self.assertEqual(compare(0.1 + 0.2, 0.3), 0)

    def test_mixed_tags_are_incomparable(self):
        self.assertIsNone(compare(1, 1.0))
        self.assertIsNone(compare("1", 1))
        self.assertFalse(values_equal(None, None))

    def test_locations_only_compare_for_equality(self):
        here = Location(61.5, 23.8)
        self.assertEqual(compare(here, Location(61.5, 23.8)), 0)
        self.assertIsNone(compare(here, Location(1.0, 2.0)))

    def test_parse_text(self):
        self.assertIs(parse_text("true"), True)
        self.assertIsNone(parse_text("null"))
        self.assertEqual(parse_text("42"), 42)
        self.assertEqual(parse_text("2.5"), 2.5)
        self.assertEqual(parse_text("61.5,23.8"), Location(61.5, 23.8))
        self.assertEqual(parse_text("missing person"), "missing person")

    def test_format_value(self):
        self.assertEqual(format_value(Location(61.5, 23.8)), "61.5,23.8")
        self.assertEqual(format_value(False), "false")
        self.assertEqual(format_value(3.0), "3.0")


class TraceFormatTests(SimpleTestCase):
    def test_line_layout_sorts_keys_and_quotes(self):
        event = TraceEvent(40, TraceKind.SHARED_WRITE, {"value": "missing person", "path": "sosCall.type", "x": ""})
        self.assertEqual(
            event.to_line(),
            't=40 SharedWrite path=sosCall.type value="missing person" x=""',
        )

    def test_round_trip(self):
        events = [
            TraceEvent(0, TraceKind.CERT_ISSUED, {"subject": "C2", "serial": "1"}),
            TraceEvent(3, TraceKind.SHARED_WRITE, {"value": 'say "hi"', "path": "a=b"}),
            TraceEvent(3, TraceKind.INSTANCE_COMPLETED, {}),
        ]
        self.assertEqual(parse_trace(format_trace(events)), events)

    def test_blank_lines_are_ignored(self):
        self.assertEqual(len(parse_trace("\nt=1 VoteCast vote=yes\n\n")), 1)

    def test_malformed_lines(self):
        with self.assertRaises(MalformedTrace):
            parse_trace("t=1 VoteCast vote=yes\nnot a trace line\n")
        with self.assertRaisesMessage(MalformedTrace, "Unknown trace kind"):
            parse_trace("t=1 Banana colour=yellow\n")

    def test_digest_is_stable(self):
        events = [TraceEvent(1, TraceKind.VOTE_CAST, {"vote": "yes"})]
        self.assertEqual(trace_digest(events), trace_digest(parse_trace(format_trace(events))))
        self.assertEqual(len(trace_digest(events)), 64)


class TraceRecorderTests(SimpleTestCase):
    def test_emit_stamps_and_stringifies(self):
        recorder = TraceRecorder(clock=lambda: 7)
        event = recorder.emit(TraceKind.COMPOSITION_FINALIZED, members={"b", "a"}, composition="SAR", skip=None)
        self.assertEqual(event.tick, 7)
        self.assertEqual(dict(event.attributes), {"members": "a,b", "composition": "SAR"})
        self.assertEqual(recorder.of_kind(TraceKind.COMPOSITION_FINALIZED, composition="SAR"), [event])

    def test_kind_is_also_an_attribute_name(self):
        recorder = TraceRecorder(clock=lambda: 2)
        event = recorder.emit(TraceKind.PROPOSAL_CREATED, kind="formation", proposal="p1")
        self.assertIs(event.kind, TraceKind.PROPOSAL_CREATED)
        self.assertEqual(event.get("kind"), "formation")
        self.assertEqual(recorder.of_kind(TraceKind.PROPOSAL_CREATED, kind="formation"), [event])
        self.assertEqual(event.to_line(), "t=2 ProposalCreated kind=formation proposal=p1")

    def test_time_never_goes_backwards(self):
        now = [5]
        recorder = TraceRecorder(clock=lambda: now[0])
        recorder.emit(TraceKind.VOTE_CAST, vote="yes")
        now[0] = 3
        with self.assertRaises(InvariantViolation):
            recorder.emit(TraceKind.VOTE_CAST, vote="no")


class MessageEncodingTests(SimpleTestCase):
    def test_encoding_is_canonical(self):
        first = SharedWrite("C2", "FireDpt", "sarCollab", "sosCall.loc", Location(61.5, 23.8), 40, "C2")
        second = SharedWrite("C2", "FireDpt", "sarCollab", "sosCall.loc", Location(61.5, 23.8), 40, "C2")
        self.assertEqual(first.encode(), second.encode())
        self.assertEqual(first.digest(), second.digest())
        self.assertEqual(decode(first.encode()), first)
