#!/usr/bin/env python3
"""
Tests del Pipeline: entrenamiento asincrónico con eventos de etapa y contenedor de modelos
"""
import asyncio
import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.core import pipeline as pipeline_module
from src.core.errors import AffinityError, ModelFormatError, TrainingError
from src.core.event_bus import STAGE_COMPLETED, EventBus
from src.core.pipeline import BuildSettings, TrainingPipeline, fit_bundle, fold_settings
from src.interface.recorder import StageRecorder
from src.modules.dataio import FeatureDataset, SynthConfig, generate_synthetic
from src.modules.infer import predict
from src.modules.model_store import dump_bundle, load_bundle, parse_bundle, save_bundle
from src.modules.svm import TrainConfig

SETTINGS = BuildSettings(branching=3, depth=2, n_trees=1, train=TrainConfig(epochs=5, seed=4))


def dataset(seed=0):
    return generate_synthetic(SynthConfig(n_categories=8, samples_per_category=12, dim=5, hierarchy_branching=2,
                                          noise_scale=0.5, seed=seed))


async def train_async(ds, settings, workers=4):
    bus = EventBus()
    recorder = StageRecorder(bus)
    async with TrainingPipeline(bus, settings, workers=workers) as pipeline:
        bundle = await pipeline.train(ds)
    return bundle, recorder


class TestTrainingPipeline:
    def test_matches_sequential_training(self):
        ds = dataset()
        for n_trees in (1, 2):
            settings = replace(SETTINGS, n_trees=n_trees)
            bundle, _ = asyncio.run(train_async(ds, settings))
            assert dump_bundle(bundle) == dump_bundle(fit_bundle(ds, settings))

    def test_stage_events(self):
        bundle, recorder = asyncio.run(train_async(dataset(), replace(SETTINGS, n_trees=2)))
        for stage in ("folds", "stats", "affinity", "tree", "plan"):
            assert recorder.stage(stage)["completed"] >= 1
        assert recorder.stage("train")["completed"] == 2
        assert recorder.get_statistics()["failures"] == []
        assert len(bundle.trees) == 2

    def test_failed_stage_is_reported(self):
        settings = replace(SETTINGS, tuning_k=0)
        with pytest.raises(AffinityError) as info:
            asyncio.run(train_async(dataset(), settings))
        assert info.value.stage == "affinity"
        assert str(info.value).startswith("[affinity]")

    def test_failure_recorded(self):
        async def run():
            bus = EventBus()
            recorder = StageRecorder(bus)
            async with TrainingPipeline(bus, replace(SETTINGS, tuning_k=0)) as pipeline:
                with pytest.raises(AffinityError):
                    await pipeline.train(dataset())
            return recorder

        recorder = asyncio.run(run())
        failures = recorder.get_statistics()["failures"]
        assert [f["stage"] for f in failures] == ["affinity"]

    def test_numeric_edge_failure_becomes_training_error(self, monkeypatch):
        def failing_edge(job, dataset, config):
            raise ValueError("singular edge")

        monkeypatch.setattr(pipeline_module, "train_edge", failing_edge)

        async def run():
            bus = EventBus()
            recorder = StageRecorder(bus)
            async with TrainingPipeline(bus, SETTINGS) as pipeline:
                with pytest.raises(TrainingError) as info:
                    await pipeline.train(dataset())
            return recorder, info.value

        recorder, error = asyncio.run(run())
        assert error.stage == "train"
        assert "singular edge" in str(error)
        failures = recorder.get_statistics()["failures"]
        assert [f["stage"] for f in failures] == ["train"]

    def test_ordered_batch_prediction(self):
        ds = dataset()
        bundle = fit_bundle(ds, SETTINGS)
        queries = ds.features[:23].astype(np.float64)

        async def run():
            bus = EventBus()
            completed = []
            bus.subscribe(STAGE_COMPLETED, lambda event: completed.append(event.data["stage"]))
            async with TrainingPipeline(bus, SETTINGS, workers=3) as pipeline:
                predictions = await pipeline.predict(bundle, queries, mode="beam", beam=2, chunk_size=5)
            return predictions, completed

        predictions, completed = asyncio.run(run())
        expected = [predict(bundle.trees, x, "beam", 2) for x in queries]
        assert [p.ranked for p in predictions] == [p.ranked for p in expected]
        assert completed == ["predict"]

    def test_single_category(self):
        ds = FeatureDataset.from_arrays(np.ones((4, 3), dtype=np.float32), [9, 9, 9, 9])
        bundle, _ = asyncio.run(train_async(ds, SETTINGS))
        assert bundle.trees[0].n_classifiers == 0
        assert predict(bundle.trees, np.zeros(3), "beam", 5).ranked == ((0, 1.0),)
        assert bundle.original_id(0) == 9

    def test_fold_seeds(self):
        single = fold_settings(SETTINGS, 0)
        assert single.seed == SETTINGS.seed
        ensemble = replace(SETTINGS, n_trees=3)
        seeds = {fold_settings(ensemble, i).seed for i in range(3)}
        assert len(seeds) == 3


class TestEventBus:
    def test_dispatch_order_and_failures(self):
        bus = EventBus()
        seen = []

        async def async_listener(event):
            seen.append(("async", event.data["stage"]))

        def broken(event):
            raise RuntimeError("boom")

        bus.subscribe(STAGE_COMPLETED, broken)
        bus.subscribe(STAGE_COMPLETED, async_listener)
        bus.subscribe(STAGE_COMPLETED, lambda event: seen.append(("sync", event.data["stage"])))
        assert bus.listener_count(STAGE_COMPLETED) == 3

        async def run():
            await bus.emit(STAGE_COMPLETED, {"stage": "tree"})
            await bus.emit(STAGE_COMPLETED, {"stage": "train"})
            await bus.emit("other", {})

        asyncio.run(run())
        assert seen == [("async", "tree"), ("sync", "tree"), ("async", "train"), ("sync", "train")]
        assert bus.emitted == 3

        bus.unsubscribe(STAGE_COMPLETED, broken)
        bus.unsubscribe(STAGE_COMPLETED, broken)
        assert bus.listener_count(STAGE_COMPLETED) == 2

    def test_recorder_log_file_and_detach(self, tmp_path):
        bus = EventBus()
        log = tmp_path / "stages.log"
        recorder = StageRecorder(bus, name="demo", log_file=str(log))

        async def run():
            await bus.emit(STAGE_COMPLETED, {"stage": "tree", "seconds": 0.5})
            recorder.detach()
            await bus.emit(STAGE_COMPLETED, {"stage": "tree", "seconds": 0.5})

        asyncio.run(run())
        assert recorder.stage("tree") == {"started": 0, "completed": 1, "failed": 0, "seconds": 0.5}
        lines = log.read_text().splitlines()
        assert len(lines) == 1 and "demo: stage_completed" in lines[0]
        assert bus.listener_count(STAGE_COMPLETED) == 0


class TestModelStore:
    def test_round_trip_is_bit_exact(self, tmp_path):
        ds = dataset()
        bundle = fit_bundle(ds, replace(SETTINGS, n_trees=2))
        path = save_bundle(bundle, tmp_path / "model.hvt")
        loaded = load_bundle(path)
        assert dump_bundle(loaded) == path.read_bytes()
        assert loaded.category_ids == bundle.category_ids
        assert loaded.folds == bundle.folds
        x = ds.features[3].astype(np.float64)
        assert predict(loaded.trees, x, "ensemble", 3).ranked == predict(bundle.trees, x, "ensemble", 3).ranked

    def test_training_is_reproducible(self):
        ds = dataset(seed=2)
        assert dump_bundle(fit_bundle(ds, SETTINGS)) == dump_bundle(fit_bundle(ds, SETTINGS))

    def test_header(self):
        blob = dump_bundle(fit_bundle(dataset(), SETTINGS))
        magic, version, _, meta_len = struct.unpack_from("<4sBBI", blob)
        assert magic == b"HVTM" and version == 1
        assert blob[10:11] == b"{"

    def test_corrupt_containers(self, tmp_path):
        blob = dump_bundle(fit_bundle(dataset(), SETTINGS))
        corrupt = {
            "magic": b"XXXX" + blob[4:],
            "version": blob[:4] + b"\x09" + blob[5:],
            "truncated": blob[:-5],
            "trailing": blob + b"\x00\x00",
            "header": blob[:6],
        }
        for name, data in corrupt.items():
            with pytest.raises(ModelFormatError):
                parse_bundle(data)
        path = tmp_path / "bad.hvt"
        path.write_bytes(corrupt["magic"])
        with pytest.raises(ModelFormatError, match="bad.hvt"):
            load_bundle(path)

    def test_invalid_tree_structure(self):
        blob = dump_bundle(fit_bundle(dataset(), SETTINGS))
        meta_len = struct.unpack_from("<I", blob, 6)[0]
        meta = blob[10:10 + meta_len].decode("utf-8")
        broken = meta.replace('"n_categories":8', '"n_categories":9', 1).encode("utf-8")
        assert len(broken) == meta_len
        with pytest.raises(ModelFormatError):
            parse_bundle(blob[:10] + broken + blob[10 + meta_len:])


if __name__ == "__main__":
    print("=" * 60)
    print("Testing Pipeline")
    print("=" * 60)
    sys.exit(pytest.main([__file__, "-q"]))
