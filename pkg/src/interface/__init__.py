"""Superficie de línea de comandos y registro de etapas"""

from .cli import main
from .recorder import StageRecorder

__all__ = ["main", "StageRecorder"]
