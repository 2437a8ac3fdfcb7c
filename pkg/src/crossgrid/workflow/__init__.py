"""Event-driven pipeline: message bus, file-backed stores, and services.

A modeling request carrying a target description flows through four
handlers (source selection, building-data, weather-data, model learning)
over explicit message queues, ending in a one-week forecast.
"""

from .bus import MessageBus, MessageEnvelope
from .services import (
    Pipeline,
    PipelineConfig,
    RequestRecord,
    WorkflowError,
    run_services,
)
from .stores import BuildingLink, StoreCatalog, StoreError

__all__ = [
    "BuildingLink",
    "MessageBus",
    "MessageEnvelope",
    "Pipeline",
    "PipelineConfig",
    "RequestRecord",
    "StoreCatalog",
    "StoreError",
    "WorkflowError",
    "run_services",
]
