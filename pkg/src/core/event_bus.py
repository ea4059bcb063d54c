"""
Event Bus - Eventos de etapa del pipeline (inicio, fin, fallo) para listeners desacoplados
"""
import asyncio
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List

logger = logging.getLogger(__name__)

STAGE_STARTED = "stage_started"
STAGE_COMPLETED = "stage_completed"
STAGE_FAILED = "stage_failed"


@dataclass
class Event:
    """Evento publicado en el bus"""
    type: str
    data: Any
    timestamp: datetime = field(default_factory=datetime.now)
    source: str = "unknown"


class EventBus:
    """
    Bus de eventos asincrónico.
    El despacho es directo: emit() espera a que todos los listeners procesen el evento,
    así el orden de los eventos de etapa coincide con el orden de ejecución.
    """

    def __init__(self):
        self._listeners: Dict[str, List[Callable]] = defaultdict(list)
        self._emitted = 0

    def subscribe(self, event_type: str, callback: Callable) -> None:
        """Suscribir un callback (función o corrutina) a un tipo de evento"""
        self._listeners[event_type].append(callback)

    def unsubscribe(self, event_type: str, callback: Callable) -> None:
        """Cancelar suscripción"""
        if callback in self._listeners.get(event_type, []):
            self._listeners[event_type].remove(callback)

    async def publish(self, event: Event) -> None:
        """Publicar un evento ya construido"""
        self._emitted += 1
        await self._dispatch(event)

    async def emit(self, event_type: str, data: Any, source: str = "system") -> None:
        """Conveniencia para crear y publicar evento"""
        await self.publish(Event(type=event_type, data=data, source=source))

    async def _dispatch(self, event: Event) -> None:
        for callback in list(self._listeners.get(event.type, [])):
            try:
                if asyncio.iscoroutinefunction(callback):
                    await callback(event)
                else:
                    callback(event)
            except Exception:
                # el fallo de un listener solo se registra
                logger.exception("event handler for %s failed", event.type)

    def listener_count(self, event_type: str) -> int:
        return len(self._listeners.get(event_type, []))

    @property
    def emitted(self) -> int:
        return self._emitted
