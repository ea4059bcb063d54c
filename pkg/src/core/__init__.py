"""Plumbing compartido: eventos, errores, semillas y configuración"""

from .errors import ArbolError
from .event_bus import Event, EventBus
from .seeding import derive_rng, derive_seed

__all__ = ["ArbolError", "Event", "EventBus", "derive_rng", "derive_seed"]
