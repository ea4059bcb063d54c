#!/usr/bin/env python3
"""
Ejemplo básico de ArbolVisual
Demuestra el ciclo completo datos → árbol → clasificadores → predicción
"""
import asyncio
import sys
from pathlib import Path

# Añadir src al path
sys.path.insert(0, str(Path(__file__).parent))

import numpy as np

from src.core.event_bus import EventBus
from src.core.pipeline import BuildSettings, TrainingPipeline
from src.interface.recorder import StageRecorder
from src.modules.dataio import SynthConfig, generate_synthetic, split_per_class
from src.modules.evaluation import evaluate_model
from src.modules.model_store import describe_bundle, load_bundle, save_bundle
from src.modules.svm import TrainConfig
from src.modules.tree import export_dot


async def main():
    """Ejecutar ejemplo básico"""
    print("=== ArbolVisual - Ejemplo Básico ===\n")

    # 1. Datos sintéticos con una jerarquía plantada de 4 x 4 categorías
    dataset = generate_synthetic(SynthConfig(n_categories=16, samples_per_category=60, dim=16,
                                             hierarchy_branching=4, noise_scale=2.0, seed=7))
    split = split_per_class(dataset, train_per_class=50, test_per_class=10, seed=7)
    print(f"✓ Dataset: {dataset.n_samples} muestras, D={dataset.dim}, N={dataset.n_categories}")

    # 2. Bus de eventos y registro de etapas
    event_bus = EventBus()
    recorder = StageRecorder(event_bus, name="demo", log_file="example_stages.log")

    # 3. Pipeline asincrónico: T_{4,2}, un árbol
    settings = BuildSettings(branching=4, depth=2, n_trees=1, train=TrainConfig(epochs=20, seed=7))
    async with TrainingPipeline(event_bus, settings) as pipeline:
        bundle = await pipeline.train(split.train)
        predictions = await pipeline.predict(bundle, split.test_features.astype(np.float64), mode="beam", beam=5)

    print("✓ Árbol construido y clasificadores entrenados")
    print(f"  - Forma: {describe_bundle(bundle)['shapes'][0]}")

    # 4. Persistir y recargar el modelo
    path = save_bundle(bundle, "example_model.hvt")
    reloaded = load_bundle(path)
    print(f"✓ Modelo guardado en {path} ({path.stat().st_size} bytes)")

    # 5. Evaluar greedy frente a beam
    print("\n=== Evaluación ===")
    for mode in ("greedy", "beam", "exhaustive"):
        report = evaluate_model(reloaded, split.test_features, split.test_labels, mode=mode, beam=5)
        row = report.primary
        print(f"  {mode:<11} top1={row.top1:.3f} top5={row.top5:.3f} evaluaciones={row.mean_evaluations:.1f}")

    first = predictions[0]
    print(f"\nPrimera consulta (verdad={split.test_labels[0]}): "
          f"{[(c, round(p, 3)) for c, p in first.ranked[:5]]}")

    # 6. Exportar el árbol
    Path("example_tree.dot").write_text(export_dot(reloaded.trees[0].tree, category_ids=reloaded.category_ids))
    print("✓ Árbol exportado a example_tree.dot")

    # Mostrar estadísticas
    print("\n=== Estadísticas de Etapas ===")
    for stage, info in recorder.get_statistics()["stages"].items():
        print(f"  - {stage}: {info['completed']} completadas, {info['seconds']:.3f}s")

    print("\n✓ Ejemplo terminado correctamente")


if __name__ == "__main__":
    asyncio.run(main())
