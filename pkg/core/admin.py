from django.contrib import admin
from django.http import HttpRequest

from .models import ScenarioRun, TraceEventRecord


class TraceEventInline(admin.TabularInline):
    model = TraceEventRecord
    fields = ("index", "tick", "kind", "attributes")
    readonly_fields = fields
    extra = 0
    can_delete = False
    show_change_link = False

    def has_add_permission(self, request: HttpRequest, obj=None) -> bool:
        return False


@admin.register(ScenarioRun)
class ScenarioRunAdmin(admin.ModelAdmin):
    """Runs are recorded by ``run_scenario --save``; the admin only reads them."""

    list_display = ("id", "scenario", "seed", "status", "exit_code", "event_count", "final_tick", "created_at")
    list_filter = ("status", "scenario")
    search_fields = ("scenario", "trace_sha256")
    readonly_fields = (
        "scenario",
        "seed",
        "duration",
        "status",
        "exit_code",
        "final_tick",
        "event_count",
        "trace_sha256",
        "diagnostics",
        "created_at",
    )
    exclude = ("trace_text",)
    inlines = [TraceEventInline]

    def has_add_permission(self, request: HttpRequest) -> bool:
        return False


@admin.register(TraceEventRecord)
class TraceEventRecordAdmin(admin.ModelAdmin):
    list_display = ("run", "index", "tick", "kind")
    list_filter = ("kind",)
    raw_id_fields = ("run",)

    def has_add_permission(self, request: HttpRequest) -> bool:
        return False
