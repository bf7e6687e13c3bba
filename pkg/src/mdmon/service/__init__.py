"""Cloud analytics service: envelope ingest, evaluation loop, operator API."""

from .engine import AnalyticsEngine, ServiceConfig
from .app import create_app

__all__ = ["AnalyticsEngine", "ServiceConfig", "create_app"]
