"""
Plotting - Gráfico del banco de pruebas: top-1 greedy vs beam por configuración
"""
import logging
from pathlib import Path
from typing import Tuple

import numpy as np

from .evaluation import EvalReport

logger = logging.getLogger(__name__)


def figure_size(scale: float = 1.0) -> Tuple[float, float]:
    """Ancho de columna en pulgadas con proporción áurea"""
    width = 6.4 * scale
    return width, width * (np.sqrt(5.0) - 1.0) / 2.0


def plot_benchmark(report: EvalReport, path, methods=("greedy", "beam", "exhaustive", "ensemble")) -> Path:
    """Barras de top-1 por configuración y método; guarda la figura en path"""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    configs = []
    for row in report.rows:
        if row.config not in configs:
            configs.append(row.config)
    present = [m for m in methods if any(r.method == m for r in report.rows)]

    fig, ax = plt.subplots(figsize=figure_size())
    width = 0.8 / max(len(present), 1)
    x = np.arange(len(configs))
    for i, method in enumerate(present):
        values = []
        for config in configs:
            match = [r.top1 for r in report.rows if r.config == config and r.method == method]
            values.append(match[0] if match else 0.0)
        ax.bar(x + i * width - 0.4 + width / 2, values, width, label=method)

    ax.set_xticks(x)
    ax.set_xticklabels(configs, rotation=20, ha="right")
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(frameon=False)
    fig.tight_layout()

    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("saved benchmark plot %s", path)
    return path
