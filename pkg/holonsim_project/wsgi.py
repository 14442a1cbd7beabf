"""
WSGI config for holonsim_project project.

Serves the read-only run-record API and the admin. The simulator itself is
driven from management commands (see core/management/commands/).
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "holonsim_project.settings")

application = get_wsgi_application()
