#!/usr/bin/env python3
"""
Tests de aceptación: propiedades de extremo a extremo sobre datos sintéticos.
Por defecto corren a tamaño reducido; ARBOL_ACCEPTANCE=1 activa el tamaño completo
y las comparaciones medidas (greedy vs beam, baseline plano, ensamble).
"""
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.core.pipeline import BuildSettings, fit_bundle
from src.interface.cli import main
from src.modules.dataio import SynthConfig, category_stats, generate_synthetic
from src.modules.evaluation import SweepConfig, predict_flat, run_benchmark, train_flat_baseline
from src.modules.infer import predict_exhaustive, predict_greedy, predict_nbest
from src.modules.metric import build_affinity, distance_fast, distance_naive
from src.modules.svm import TrainConfig
from src.modules.tree import build_tree, validate_tree

FULL = os.environ.get("ARBOL_ACCEPTANCE") == "1"
full_only = pytest.mark.skipif(not FULL, reason="set ARBOL_ACCEPTANCE=1 for measured comparisons")


def size(full, reduced):
    return full if FULL else reduced


def trained_models(count, seed=0):
    """Modelos pequeños (<= 64 hojas) entrenados sobre datos sintéticos variados"""
    rng = np.random.default_rng(seed)
    models = []
    for i in range(count):
        n = int(rng.integers(4, 33))
        depth = 2 if i % 3 else 3
        ds = generate_synthetic(SynthConfig(n_categories=n, samples_per_category=10, dim=8,
                                            hierarchy_branching=int(rng.integers(2, 5)), noise_scale=1.5,
                                            seed=int(rng.integers(1 << 30))))
        settings = BuildSettings(branching=int(rng.integers(2, 7)), depth=depth,
                                 train=TrainConfig(epochs=5, seed=i))
        models.append(fit_bundle(ds, settings).trees[0])
    return models


def queries_for(model, rng, count):
    return rng.normal(scale=10.0, size=(count, model.dim))


@pytest.fixture(scope="module")
def suite():
    rng = np.random.default_rng(100)
    models = trained_models(size(30, 6))
    return [(model, queries_for(model, rng, size(100, 20))) for model in models]


class TestMetricCriteria:
    def test_identity(self):
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        for trial in range(size(200, 40)):
            dim = (2, 16, 128)[trial % 3]
            a = rng.normal(size=(int(rng.integers(5, 201)), dim))
            b = rng.normal(loc=1.0, size=(int(rng.integers(5, 201)), dim))
            naive = distance_naive(a, b)
            assert abs(distance_fast(category_stats(a), category_stats(b)) - naive) / naive <= 1e-9
        assert time.perf_counter() - start <= 5.0

    def test_speed(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(1000, 64)), rng.normal(size=(1000, 64))
        sa, sb = category_stats(a), category_stats(b)
        ratios = []
        for _ in range(size(20, 5)):
            start = time.perf_counter()
            distance_naive(a, b)
            naive = time.perf_counter() - start
            start = time.perf_counter()
            distance_fast(sa, sb)
            ratios.append(naive / max(time.perf_counter() - start, 1e-9))
        assert np.median(ratios) >= 20

    def test_affinity_well_formed(self):
        rng = np.random.default_rng(3)
        for _ in range(size(50, 10)):
            n = int(rng.integers(2, 30))
            stats = [category_stats(rng.normal(loc=rng.normal(size=4) * 3, size=(5, 4))) for _ in range(n)]
            A = build_affinity(stats, tuning_k=3).values
            perm = rng.permutation(n)
            np.testing.assert_array_equal(A, A.T)
            np.testing.assert_array_equal(np.diag(A), np.ones(n))
            off = A[~np.eye(n, dtype=bool)]
            assert np.all(off > 0) and np.all(off <= 1)
            permuted = build_affinity([stats[i] for i in perm], tuning_k=3).values
            np.testing.assert_allclose(permuted, A[np.ix_(perm, perm)], rtol=1e-12)


class TestTreeCriteria:
    def test_fuzzed_builds(self):
        rng = np.random.default_rng(4)
        start = time.perf_counter()
        for trial in range(size(100, 20)):
            K = (2, 4, 6, 10, 32)[trial % 5]
            L = int(rng.integers(2, 5))
            n = int(rng.integers(3, size(201, 61)))
            stats = [category_stats(rng.normal(loc=rng.normal(size=6) * 4, size=(3, 6))) for _ in range(n)]
            tree = build_tree(build_affinity(stats), K=K, L=L, seed=trial)
            assert validate_tree(tree) == []
            assert len(tree.leaves()) == n
        assert time.perf_counter() - start <= 60.0


class TestSearchCriteria:
    def test_beam_exactness(self, suite):
        for model, queries in suite:
            paths = len(model.tree.leaves())
            for x in queries:
                beam = predict_nbest(model, x, beam=paths)
                exhaustive = predict_exhaustive(model, x)
                assert beam.paths[0] == exhaustive.paths[0]
                assert math.isclose(beam.ranked[0][1], exhaustive.ranked[0][1], rel_tol=1e-12)

    def test_greedy_degeneration(self, suite):
        for model, queries in suite:
            for x in queries:
                assert predict_nbest(model, x, beam=1).top == predict_greedy(model, x).top

    def test_beam_monotonicity(self, suite):
        for model, queries in suite:
            if model.tree.max_depth != 2:
                continue
            for x in queries:
                values = [predict_nbest(model, x, beam=q).top_log_prob for q in (1, 2, 3, 5, 10)]
                assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_cost_budget(self, suite):
        for model, queries in suite:
            tree = model.tree
            K, L = tree.branching, tree.max_depth
            for q in (1, 3, 5):
                bound = tree.beam_budget(q)
                for x in queries:
                    evaluations = predict_nbest(model, x, beam=q).classifier_evaluations
                    assert evaluations <= bound
                    if tree.max_fanout() <= K:
                        assert evaluations <= K + (L - 1) * q * K

    def test_flat_baseline_count(self):
        ds = generate_synthetic(SynthConfig(n_categories=7, samples_per_category=10, dim=4))
        flat = train_flat_baseline(ds, TrainConfig(epochs=3))
        assert predict_flat(flat, ds.features[0]).classifier_evaluations == 7


def planted(seed, n_categories=64, per_class=120, noise_scale=16.0):
    # dos niveles: con shrink 0.35 la raíz aún separa los supergrupos y el ruido confunde hojas hermanas
    return generate_synthetic(SynthConfig(n_categories=n_categories, samples_per_category=per_class, dim=32,
                                          hierarchy_branching=8, noise_scale=noise_scale, shrink=0.35, seed=seed))


class TestMeasuredCriteria:
    def test_reduced_benchmark_shape(self):
        ds = planted(0, n_categories=16, per_class=20, noise_scale=4.0)
        train = TrainConfig(epochs=20)
        report = run_benchmark(ds, [SweepConfig(4, 2, 5, 1)], seed=0, repetitions=1, train_per_class=15,
                               test_per_class=5, include_flat=True, train_config=train)
        beam = report.row("T4,2 Q=5 M=1", "beam")
        assert beam.beam_ge_greedy == 1.0
        assert beam.top5 >= beam.top1
        assert beam.top1 >= 0.5
        assert report.row("T4,2 Q=5 M=1", "exhaustive").top1 >= 0.5
        assert report.row("flat", "flat").top1 >= 0.5
        assert report.row("flat", "flat").mean_evaluations == 16

    def test_trained_edges_separate_their_children(self):
        ds = planted(1, n_categories=16, per_class=20, noise_scale=4.0)
        model = fit_bundle(ds, BuildSettings(branching=4, depth=2, train=TrainConfig(epochs=20))).trees[0]
        assert model.n_classifiers == model.tree.n_edges
        for clf in model.classifiers:
            assert clf.train_accuracy >= 0.9, (clf.node, clf.child_index)
            assert np.linalg.norm(clf.weights) > 0

    @full_only
    def test_beam_not_worse_than_greedy(self):
        start = time.perf_counter()
        not_worse = better = 0
        for seed in range(10):
            report = run_benchmark(planted(seed), [SweepConfig(8, 2, 5, 1)], seed=seed, repetitions=1,
                                   train_per_class=100, test_per_class=20)
            greedy = report.row("T8,2 Q=5 M=1", "greedy").top1
            beam = report.row("T8,2 Q=5 M=1", "beam").top1
            assert beam >= 10 / 64
            not_worse += beam >= greedy
            better += beam > greedy
        assert not_worse >= 9 and better >= 5
        assert time.perf_counter() - start <= 300.0

    @full_only
    def test_flat_baseline_close_to_tree(self):
        gaps = []
        for seed in range(3):
            report = run_benchmark(planted(seed), [SweepConfig(8, 2, 5, 1)], seed=seed, repetitions=1,
                                   train_per_class=100, test_per_class=20, include_flat=True)
            flat = report.row("flat", "flat").top1
            beam = report.row("T8,2 Q=5 M=1", "beam").top1
            assert min(flat, beam) >= 10 / 64
            gaps.append(flat - beam)
        assert abs(np.mean(gaps)) <= 0.03

    @full_only
    def test_ensemble_benefit(self):
        diffs = []
        for seed in range(3):
            report = run_benchmark(planted(seed), [SweepConfig(8, 2, 5, 5)], seed=seed, repetitions=1,
                                   train_per_class=100, test_per_class=20)
            ensemble = report.row("T8,2 Q=5 M=5", "ensemble").top1
            single = report.row("T8,2 Q=5 M=5", "beam_single").top1
            assert single >= 10 / 64
            diffs.append(ensemble - single)
        assert np.mean(diffs) >= -0.005


class TestDeterminism:
    def test_cli_train_and_predict(self, tmp_path):
        data = tmp_path / "data.bin"
        assert main(["synth", "--out", str(data), "--categories", "12", "--per-class", "15", "--dim", "6",
                     "--seed", "5"]) == 0
        flags = ["--branching", "3", "--depth", "2", "--epochs", "5", "--trees", "2"]
        first, second = tmp_path / "a.hvt", tmp_path / "b.hvt"
        assert main(["train", "--data", str(data), "--model", str(first), "--workers", "1"] + flags) == 0
        assert main(["train", "--data", str(data), "--model", str(second), "--workers", "4"] + flags) == 0
        assert first.read_bytes() == second.read_bytes()

        outputs = []
        for workers in ("1", "4"):
            out = tmp_path / f"pred{workers}.jsonl"
            assert main(["predict", "--model", str(first), "--queries", str(data), "--mode", "ensemble",
                         "--workers", workers, "--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]


if __name__ == "__main__":
    print("=" * 60)
    print("Testing Acceptance" + (" (full size)" if FULL else " (reduced size)"))
    print("=" * 60)
    sys.exit(pytest.main([__file__, "-q"]))
