"""
Management command to validate a scenario without running it.
Usage: python manage.py check_scenario sar_landslide
"""

from django.core.management.base import BaseCommand, CommandError

from core import scenario as scenarios
from core.exceptions import ScenarioError


class Command(BaseCommand):
    help = "Validate a scenario file against the schema and resolve its references"

    def add_arguments(self, parser):
        parser.add_argument("scenario", type=str, help="Scenario file or bundled scenario name")

    def handle(self, *args, **options):
        try:
            scenario = scenarios.load(options["scenario"])
        except ScenarioError as exc:
            for error in exc.errors:
                self.stderr.write(self.style.ERROR(error))
            raise CommandError(f"{options['scenario']}: {len(exc.errors)} problem(s)", returncode=1) from exc

        summary = ", ".join(f"{count} {label}" for label, count in scenario.summary().items())
        self.stdout.write(self.style.SUCCESS(f"{scenario.name}: OK ({summary})"))
