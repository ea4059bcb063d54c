"""
Errors - Jerarquía de excepciones del framework y códigos de salida del CLI
"""
from typing import Optional


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_TRAINING = 5


class ArbolError(Exception):
    """Error base de ArbolVisual"""

    exit_code = EXIT_TRAINING

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def with_stage(self, stage: str) -> "ArbolError":
        """Anotar la etapa del pipeline donde ocurrió el error"""
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class UsageError(ArbolError):
    """Flags o configuración inconsistentes"""

    exit_code = EXIT_USAGE


class DataFormatError(ArbolError):
    """Archivo de datos mal formado; record es el número de fila (1-based)"""

    exit_code = EXIT_FORMAT

    def __init__(self, message: str, record: Optional[int] = None, path: Optional[str] = None):
        where = []
        if path:
            where.append(str(path))
        if record is not None:
            where.append(f"row {record}")
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.record = record
        self.path = path


class DimensionError(ArbolError):
    """Dimensiones incompatibles entre vectores, modelos o consultas"""

    exit_code = EXIT_FORMAT


class ModelFormatError(ArbolError):
    """Contenedor de modelo corrupto o de versión desconocida"""

    exit_code = EXIT_FORMAT


class IncompatibleModelError(ArbolError):
    """Modelos que no comparten dimensión o mapa de categorías"""

    exit_code = EXIT_FORMAT


class AffinityError(ArbolError):
    """Entradas inválidas para la matriz de afinidad"""


class SpectralError(ArbolError):
    """Fallo del embedding espectral o del clustering"""


class TrainingError(ArbolError):
    """Fallo de entrenamiento; node identifica el nodo del árbol si aplica"""

    def __init__(self, message: str, stage: Optional[str] = None, node: Optional[int] = None):
        if node is not None:
            message = f"node {node}: {message}"
        super().__init__(message, stage=stage)
        self.node = node
