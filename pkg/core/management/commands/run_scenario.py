"""
Management command to run a scenario on the simulated network.
Usage: python manage.py run_scenario sar --inject 'SOS type=wildfire' --seed 42

Exit codes: 0 quiescent, 1 invariant violation (or unusable input), 2 duration cap.
"""

import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core import scenario as scenarios
from core.conf import SimulationConfig
from core.exceptions import ScenarioError
from core.models import ScenarioRun
from core.runner import RunStatus, run_scenario

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Run a scenario until quiescence or the duration cap and write its trace"

    def add_arguments(self, parser):
        parser.add_argument(
            "scenario",
            type=str,
            help="Scenario file, or the name of a bundled scenario (e.g. sar)",
        )
        parser.add_argument("--seed", type=int, help="Override the scenario seed")
        parser.add_argument("--until", type=int, help="Duration cap in ticks")
        parser.add_argument(
            "--inject",
            action="append",
            default=[],
            metavar="SPEC",
            help="Extra sensation: '[@TICK] [HOLON:]KIND key=value ...' (repeatable)",
        )
        parser.add_argument("--trace", type=str, help="Trace file path (default: TRACE_DIR/<scenario>-<seed>.trace)")
        parser.add_argument(
            "--save",
            action="store_true",
            help="Store the run and its events in the database",
        )

    def handle(self, *args, **options):
        config = SimulationConfig.from_settings()
        try:
            scenario = scenarios.load(options["scenario"])
            result = run_scenario(
                scenario,
                seed=options["seed"],
                duration=options["until"],
                inject=options["inject"],
                config=config,
            )
        except ScenarioError as exc:
            for error in exc.errors:
                self.stderr.write(self.style.ERROR(error))
            raise CommandError(f"Cannot run {options['scenario']}", returncode=1) from exc

        trace_path = Path(options["trace"]) if options["trace"] else config.trace_dir / f"{result.scenario}-{result.seed}.trace"
        result.write(trace_path)
        self.stdout.write(f"Trace: {trace_path} ({len(result.events)} events, sha256 {result.digest[:16]})")

        if options["save"]:
            run = ScenarioRun.objects.record(result)
            self.stdout.write(f"Saved run #{run.id}")

        for line in result.diagnostics:
            self.stderr.write(line)
        summary = f"{result.scenario} (seed {result.seed}) {result.status.value} at t={result.final_tick}"
        if result.status is RunStatus.QUIESCENT:
            self.stdout.write(self.style.SUCCESS(summary))
            return
        raise CommandError(summary, returncode=result.exit_code)
