from django.urls import path

from . import views

app_name = "core"

urlpatterns = [
    # Stored scenario runs
    path("api/runs/", views.run_list, name="run_list"),
    path("api/runs/<int:run_id>/", views.run_detail, name="run_detail"),
    path("api/runs/<int:run_id>/trace/", views.run_trace, name="run_trace"),
]
