# Generated by Django 5.2.8 on 2026-10-18 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ScenarioRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                (
                    "scenario",
                    models.CharField(
                        help_text="Name of the scenario file that was run.", max_length=255, verbose_name="Scenario"
                    ),
                ),
                ("seed", models.BigIntegerField(verbose_name="Seed")),
                (
                    "duration",
                    models.PositiveIntegerField(help_text="Virtual-time cap in ticks.", verbose_name="Duration Cap"),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("quiescent", "Quiescent"),
                            ("duration_cap", "Duration cap reached"),
                            ("invariant_violation", "Invariant violation"),
                        ],
                        max_length=32,
                        verbose_name="Status",
                    ),
                ),
                ("exit_code", models.PositiveSmallIntegerField(verbose_name="Exit Code")),
                ("final_tick", models.PositiveIntegerField(default=0, verbose_name="Final Tick")),
                ("event_count", models.PositiveIntegerField(default=0, verbose_name="Event Count")),
                (
                    "trace_sha256",
                    models.CharField(
                        help_text="Digest of the trace file bytes.", max_length=64, verbose_name="Trace SHA-256"
                    ),
                ),
                ("trace_text", models.TextField(blank=True, verbose_name="Trace")),
                ("diagnostics", models.TextField(blank=True, verbose_name="Diagnostics")),
                ("created_at", models.DateTimeField(auto_now_add=True, verbose_name="Created At")),
            ],
            options={
                "verbose_name": "Scenario Run",
                "verbose_name_plural": "Scenario Runs",
                "ordering": ["-created_at", "-id"],
            },
        ),
        migrations.CreateModel(
            name="TraceEventRecord",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("index", models.PositiveIntegerField(verbose_name="Index")),
                ("tick", models.PositiveIntegerField(verbose_name="Tick")),
                ("kind", models.CharField(db_index=True, max_length=64, verbose_name="Kind")),
                ("attributes", models.JSONField(default=dict, verbose_name="Attributes")),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="events",
                        to="core.scenariorun",
                        verbose_name="Run",
                    ),
                ),
            ],
            options={
                "verbose_name": "Trace Event",
                "verbose_name_plural": "Trace Events",
                "ordering": ["run", "index"],
                "constraints": [
                    models.UniqueConstraint(fields=("run", "index"), name="unique_event_index_per_run")
                ],
            },
        ),
    ]
