"""
Management command to check a trace file against an assertion file.
Usage: python manage.py verify_trace traces/sar-42.trace core/scenarios/sar_wildfire.assertions
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.assertions import parse_assertions, verify
from core.exceptions import MalformedAssertion, MalformedTrace
from core.trace import parse_trace


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"{path}: {exc.strerror or exc}", returncode=1) from exc


class Command(BaseCommand):
    help = "Evaluate declarative assertions (exists, absent, count, order) against a trace"

    def add_arguments(self, parser):
        parser.add_argument("trace", type=str, help="Trace file written by run_scenario")
        parser.add_argument("assertions", type=str, help="Assertion file, one check per line")

    def handle(self, *args, **options):
        try:
            events = parse_trace(_read(options["trace"]))
        except MalformedTrace as exc:
            raise CommandError(f"{options['trace']}: {exc}", returncode=1) from exc
        try:
            assertions = parse_assertions(_read(options["assertions"]))
        except MalformedAssertion as exc:
            raise CommandError(f"{options['assertions']}: {exc}", returncode=1) from exc

        report = verify(events, assertions)
        for result in report.results:
            style = self.style.SUCCESS if result.passed else self.style.ERROR
            self.stdout.write(style(str(result)))
        total = len(report.results)
        if not report.passed:
            raise CommandError(f"{len(report.failures)} of {total} assertion(s) failed", returncode=1)
        self.stdout.write(self.style.SUCCESS(f"All {total} assertion(s) passed"))
