import hashlib
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from core import scenario
from core.models import ScenarioRun


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def call(self, *args, **kwargs):
        out, err = StringIO(), StringIO()
        call_command(*args, stdout=out, stderr=err, **kwargs)
        return out.getvalue(), err.getvalue()


class RunScenarioCommandTests(CommandTestCase):
    def test_writes_the_trace(self):
        trace = self.dir / "wildfire.trace"
        out, _ = self.call("run_scenario", "sar", "--inject", "SOS type=wildfire", "--trace", str(trace))
        self.assertIn("quiescent", out)
        data = trace.read_bytes()
        self.assertIn(b"TriggerFired", data)
        self.assertIn(hashlib.sha256(data).hexdigest()[:16], out)
        self.assertFalse(ScenarioRun.objects.exists())

    def test_save_stores_the_run(self):
        trace = self.dir / "saved.trace"
        out, _ = self.call("run_scenario", "sar", "--inject", "SOS type=stranded", "--trace", str(trace), "--save")
        run = ScenarioRun.objects.get()
        self.assertIn(f"Saved run #{run.id}", out)
        self.assertEqual(run.status, ScenarioRun.Status.QUIESCENT)
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(run.trace_sha256, hashlib.sha256(trace.read_bytes()).hexdigest())
        self.assertEqual(run.events.count(), run.event_count)
        self.assertTrue(run.events.filter(kind="TriggerFired", attributes__behaviour="rescue").exists())

    def test_duration_cap_exits_with_two(self):
        trace = self.dir / "short.trace"
        with self.assertRaises(CommandError) as ctx:
            self.call("run_scenario", "sar", "--inject", "SOS type=missing person", "--until", "45", "--trace", str(trace))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertTrue(trace.exists())

    def test_bad_input_exits_with_one(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("run_scenario", "sar", "--inject", "Ghost:SOS type=wildfire")
        self.assertEqual(ctx.exception.returncode, 1)
        with self.assertRaises(CommandError) as ctx:
            self.call("run_scenario", str(self.dir / "missing.scenario"))
        self.assertEqual(ctx.exception.returncode, 1)


class VerifyTraceCommandTests(CommandTestCase):
    def setUp(self):
        super().setUp()
        self.trace = self.dir / "wildfire.trace"
        self.call("run_scenario", "sar", "--inject", "SOS type=wildfire", "--trace", str(self.trace))

    def test_bundled_assertions_pass(self):
        out, _ = self.call("verify_trace", str(self.trace), str(scenario.SCENARIO_DIR / "sar_wildfire.assertions"))
        self.assertIn("All 9 assertion(s) passed", out)

    def test_failed_assertions_exit_with_one(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("verify_trace", str(self.trace), str(scenario.SCENARIO_DIR / "sar_stranded.assertions"))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("assertion(s) failed", str(ctx.exception))

    def test_malformed_inputs(self):
        bad_trace = self.dir / "bad.trace"
        bad_trace.write_text("not a trace line\n", encoding="utf-8")
        with self.assertRaises(CommandError) as ctx:
            self.call("verify_trace", str(bad_trace), str(scenario.SCENARIO_DIR / "sar_wildfire.assertions"))
        self.assertEqual(ctx.exception.returncode, 1)

        bad_assertions = self.dir / "bad.assertions"
        bad_assertions.write_text("exists: Bogus\n", encoding="utf-8")
        with self.assertRaises(CommandError) as ctx:
            self.call("verify_trace", str(self.trace), str(bad_assertions))
        self.assertIn("line 1", str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("verify_trace", str(self.dir / "nope.trace"), str(self.dir / "nope.assertions"))
        self.assertEqual(ctx.exception.returncode, 1)


class CheckScenarioCommandTests(CommandTestCase):
    def test_bundled_scenario(self):
        out, _ = self.call("check_scenario", "sar_landslide")
        self.assertIn("sar_landslide: OK", out)
        self.assertIn("1 injections", out)

    def test_problems_are_listed(self):
        path = self.dir / "broken.scenario"
        path.write_text('{"holons": [{"id": "A"}], "compositions": [{"id": "X", "candidates": ["A", "B"]}]}')
        with self.assertRaises(CommandError) as ctx:
            self.call("check_scenario", str(path))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("1 problem(s)", str(ctx.exception))
