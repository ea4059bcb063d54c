"""
StageRecorder - Listener de eventos de etapa: registra inicio/fin/fallo y tiempos por etapa
"""
import logging
from datetime import datetime
from typing import Dict, List, Optional

from ..core.event_bus import STAGE_COMPLETED, STAGE_FAILED, STAGE_STARTED, Event, EventBus

logger = logging.getLogger(__name__)


class StageRecorder:
    """
    Escucha los eventos del pipeline, los envía al logging y mantiene estadísticas
    por etapa (ejecuciones, segundos acumulados, fallos). Opcionalmente añade cada
    evento a un archivo de texto.
    """

    def __init__(self, event_bus: EventBus, name: str = "recorder", log_file: Optional[str] = None):
        self.name = name
        self.event_bus = event_bus
        self.log_file = log_file
        self._stages: Dict[str, Dict] = {}
        self._failures: List[Dict] = []
        self._event_count = 0

        self.event_bus.subscribe(STAGE_STARTED, self._on_event)
        self.event_bus.subscribe(STAGE_COMPLETED, self._on_event)
        self.event_bus.subscribe(STAGE_FAILED, self._on_event)

    def detach(self) -> None:
        """Cancelar las suscripciones"""
        for event_type in (STAGE_STARTED, STAGE_COMPLETED, STAGE_FAILED):
            self.event_bus.unsubscribe(event_type, self._on_event)

    def _on_event(self, event: Event) -> None:
        self._event_count += 1
        data = event.data or {}
        stage = data.get("stage", "unknown")
        entry = self._stages.setdefault(stage, {"started": 0, "completed": 0, "failed": 0, "seconds": 0.0})
        extra = {k: v for k, v in data.items() if k not in ("stage", "seconds", "error")}

        if event.type == STAGE_STARTED:
            entry["started"] += 1
            logger.info("stage %s started %s", stage, extra or "")
        elif event.type == STAGE_COMPLETED:
            entry["completed"] += 1
            entry["seconds"] += float(data.get("seconds", 0.0))
            logger.info("stage %s completed in %.3fs %s", stage, float(data.get("seconds", 0.0)), extra or "")
        else:
            entry["failed"] += 1
            self._failures.append({"stage": stage, "error": data.get("error"), "timestamp": event.timestamp.isoformat()})
            logger.error("stage %s failed: %s", stage, data.get("error"))

        if self.log_file:
            self._write_log(f"[{event.timestamp.isoformat()}] {self.name}: {event.type} {data}\n")

    def _write_log(self, entry: str) -> None:
        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(entry)

    def stage(self, name: str) -> Dict:
        """Contadores de una etapa"""
        return dict(self._stages.get(name, {}))

    def get_statistics(self) -> Dict:
        return {
            "name": self.name,
            "events": self._event_count,
            "stages": {k: dict(v) for k, v in self._stages.items()},
            "failures": list(self._failures),
            "generated_at": datetime.now().isoformat(),
        }
