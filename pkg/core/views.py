import logging

from django.http import HttpResponse, JsonResponse
from django.shortcuts import get_object_or_404
from django.views.decorators.http import require_http_methods

from .models import ScenarioRun

logger = logging.getLogger(__name__)


def _run_summary(run: ScenarioRun) -> dict:
    return {
        "id": run.id,
        "scenario": run.scenario,
        "seed": run.seed,
        "duration": run.duration,
        "status": run.status,
        "exit_code": run.exit_code,
        "final_tick": run.final_tick,
        "event_count": run.event_count,
        "trace_sha256": run.trace_sha256,
        "created_at": run.created_at.isoformat(),
    }


@require_http_methods(["GET"])
def run_list(request):
    """
    Stored runs, newest first. ``?scenario=`` and ``?status=`` filter the list.
    """
    runs = ScenarioRun.objects.all()
    scenario = request.GET.get("scenario")
    if scenario:
        runs = runs.filter(scenario=scenario)
    status = request.GET.get("status")
    if status:
        if status not in ScenarioRun.Status.values:
            return JsonResponse({"error": f"Invalid status '{status}'"}, status=400)
        runs = runs.filter(status=status)
    return JsonResponse({"success": True, "runs": [_run_summary(run) for run in runs]})


@require_http_methods(["GET"])
def run_detail(request, run_id: int):
    """One run with its events; ``?kind=TriggerFired`` keeps a single event kind."""
    run = get_object_or_404(ScenarioRun, id=run_id)
    events = run.events.all()
    kind = request.GET.get("kind")
    if kind:
        events = events.filter(kind=kind)
    logger.debug(f"Serving run {run_id} ({events.count()} events, kind={kind or 'any'})")
    data = _run_summary(run)
    data["diagnostics"] = run.diagnostics.splitlines()
    data["events"] = [event.as_dict() for event in events]
    return JsonResponse({"success": True, "run": data})


@require_http_methods(["GET"])
def run_trace(request, run_id: int):
    run = get_object_or_404(ScenarioRun, id=run_id)
    response = HttpResponse(run.trace_text.encode("utf-8"), content_type="text/plain; charset=utf-8")
    response["Content-Disposition"] = f'inline; filename="{run.scenario}-{run.seed}.trace"'
    return response
