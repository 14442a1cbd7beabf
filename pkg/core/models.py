from django.db import models, transaction
from django.utils.translation import gettext_lazy as _

from .runner import RunResult


class ScenarioRunManager(models.Manager):
    def record(self, result: RunResult) -> "ScenarioRun":
        """Store a finished run and one row per trace event, atomically."""
        with transaction.atomic():
            run = self.create(
                scenario=result.scenario,
                seed=result.seed,
                duration=result.duration,
                status=result.status.value,
                exit_code=result.exit_code,
                final_tick=result.final_tick,
                event_count=len(result.events),
                trace_sha256=result.digest,
                trace_text=result.trace_text,
                diagnostics="\n".join(result.diagnostics),
            )
            TraceEventRecord.objects.bulk_create(
                TraceEventRecord(
                    run=run,
                    index=index,
                    tick=event.tick,
                    kind=event.kind.value,
                    attributes=dict(event.attributes),
                )
                for index, event in enumerate(result.events)
            )
        return run


class ScenarioRun(models.Model):
    """One execution of a scenario, kept with its full trace."""

    class Status(models.TextChoices):
        QUIESCENT = "quiescent", _("Quiescent")
        DURATION_CAP = "duration_cap", _("Duration cap reached")
        INVARIANT_VIOLATION = "invariant_violation", _("Invariant violation")

    scenario: str = models.CharField(
        _("Scenario"),
        max_length=255,
        help_text=_("Name of the scenario file that was run."),
    )
    seed: int = models.BigIntegerField(_("Seed"))
    duration: int = models.PositiveIntegerField(
        _("Duration Cap"),
        help_text=_("Virtual-time cap in ticks."),
    )
    status: str = models.CharField(
        _("Status"),
        max_length=32,
        choices=Status.choices,
    )
    exit_code: int = models.PositiveSmallIntegerField(_("Exit Code"))
    final_tick: int = models.PositiveIntegerField(_("Final Tick"), default=0)
    event_count: int = models.PositiveIntegerField(_("Event Count"), default=0)
    trace_sha256: str = models.CharField(
        _("Trace SHA-256"),
        max_length=64,
        help_text=_("Digest of the trace file bytes."),
    )
    trace_text: str = models.TextField(_("Trace"), blank=True)
    diagnostics: str = models.TextField(_("Diagnostics"), blank=True)
    created_at = models.DateTimeField(_("Created At"), auto_now_add=True)

    objects = ScenarioRunManager()

    class Meta:
        verbose_name = _("Scenario Run")
        verbose_name_plural = _("Scenario Runs")
        ordering = ["-created_at", "-id"]

    def __str__(self) -> str:
        return f"{self.scenario} (seed {self.seed}): {self.get_status_display()}"


class TraceEventRecord(models.Model):
    run: ScenarioRun = models.ForeignKey(
        ScenarioRun,
        on_delete=models.CASCADE,
        related_name="events",
        verbose_name=_("Run"),
    )
    index: int = models.PositiveIntegerField(_("Index"))
    tick: int = models.PositiveIntegerField(_("Tick"))
    kind: str = models.CharField(_("Kind"), max_length=64, db_index=True)
    attributes: dict = models.JSONField(_("Attributes"), default=dict)

    class Meta:
        verbose_name = _("Trace Event")
        verbose_name_plural = _("Trace Events")
        ordering = ["run", "index"]
        constraints = [
            models.UniqueConstraint(fields=["run", "index"], name="unique_event_index_per_run"),
        ]

    def __str__(self) -> str:
        return f"t={self.tick} {self.kind}"

    def as_dict(self) -> dict:
        return {"index": self.index, "tick": self.tick, "kind": self.kind, "attributes": self.attributes}
