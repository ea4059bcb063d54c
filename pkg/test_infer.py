#!/usr/bin/env python3
"""
Tests de Infer: probabilidad de arista, greedy, exhaustivo, N-best por capas y ensambles
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.core.errors import DimensionError, IncompatibleModelError, UsageError
from src.modules.infer import (
    edge_probability, log_edge_probabilities, predict, predict_ensemble, predict_exhaustive, predict_greedy,
    predict_nbest,
)
from src.modules.metric import AffinityMatrix
from src.modules.svm import TreeModel
from src.modules.tree import TreeNode, VisualTree, build_tree


def sigmoid(s):
    return 1.0 / (1.0 + math.exp(-s))


def logit(p):
    return math.log(p / (1.0 - p))


def two_level_tree():
    """raíz -> {0,1} y {2,3}, cada uno con dos hojas"""
    nodes = (
        TreeNode(0, 1, (0, 1, 2, 3), (1, 2)),
        TreeNode(1, 2, (0, 1), (3, 4), 0),
        TreeNode(2, 2, (2, 3), (5, 6), 0),
        TreeNode(3, 3, (0,), (), 1),
        TreeNode(4, 3, (1,), (), 1),
        TreeNode(5, 3, (2,), (), 2),
        TreeNode(6, 3, (3,), (), 2),
    )
    return VisualTree(nodes=nodes, branching=2, max_depth=2, n_categories=4)


def mixed_depth_tree():
    """raíz -> hoja 0 y {1,2} con dos hojas"""
    nodes = (
        TreeNode(0, 1, (0, 1, 2), (1, 2)),
        TreeNode(1, 2, (0,), (), 0),
        TreeNode(2, 2, (1, 2), (3, 4), 0),
        TreeNode(3, 3, (1,), (), 2),
        TreeNode(4, 3, (2,), (), 2),
    )
    return VisualTree(nodes=nodes, branching=2, max_depth=2, n_categories=3)


def flat_tree(n):
    root = TreeNode(0, 1, tuple(range(n)), tuple(range(1, n + 1)))
    leaves = tuple(TreeNode(i + 1, 2, (i,), (), 0) for i in range(n))
    return VisualTree(nodes=(root,) + leaves, branching=max(n, 2), max_depth=1, n_categories=n)


def bias_model(tree, biases):
    """Modelo con W = 0 y sesgos fijados: las puntuaciones no dependen de la consulta"""
    return TreeModel.from_weights(tree, {node: (np.zeros((len(b), 1)), b) for node, b in biases.items()})


def random_model(rng, tree, dim=4):
    weights = {node.id: (rng.normal(size=(node.fanout, dim)), rng.normal(size=node.fanout))
               for node in tree.internal_nodes()}
    return TreeModel.from_weights(tree, weights)


def random_tree(rng, n, K, L, seed=0):
    points = rng.normal(size=(n, 3))
    d = np.linalg.norm(points[:, None] - points[None, :], axis=2)
    values = np.exp(-d)
    aff = AffinityMatrix(values=values, bandwidths=np.ones((n, n)), distances=d, scales=np.ones(n))
    return build_tree(aff, K=K, L=L, seed=seed)


def greedy_trap():
    # la raíz prefiere {0,1} por poco, pero el mejor camino termina en la categoría 2
    return bias_model(two_level_tree(), {0: [0.2, 0.0], 1: [0.0, 0.0], 2: [5.0, -5.0]})


class TestEdgeProbability:
    def test_values(self):
        assert edge_probability(0.0) == 0.5
        assert edge_probability(2.0) == pytest.approx(sigmoid(2.0))
        assert edge_probability(-2.0) == pytest.approx(sigmoid(-2.0))

    def test_extreme_scores(self):
        assert edge_probability(800.0) == 1.0
        assert 0.0 <= edge_probability(-800.0) < 1e-300
        logp = log_edge_probabilities(np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(logp))
        assert logp[0] == pytest.approx(-800.0)

    def test_renormalized_siblings_sum_to_one(self):
        logp = log_edge_probabilities(np.array([0.3, -1.2, 2.0]), renormalize=True)
        assert np.exp(logp).sum() == pytest.approx(1.0)


class TestSearch:
    def test_greedy_misses_best_path(self):
        model = greedy_trap()
        x = np.array([1.0])
        greedy = predict_greedy(model, x)
        assert greedy.top == 0
        assert greedy.ranked[0][1] == pytest.approx(sigmoid(0.2) * 0.5)
        assert greedy.classifier_evaluations == 4
        assert greedy.paths[0] == ((0, 0), (1, 0))

        exhaustive = predict_exhaustive(model, x)
        assert exhaustive.top == 2
        assert exhaustive.ranked[0][1] == pytest.approx(0.5 * sigmoid(5.0))
        assert predict_nbest(model, x, beam=2).top == 2

    def test_exhaustive_path_products(self):
        model = greedy_trap()
        prediction = predict_exhaustive(model, np.array([1.0]))
        expected = {
            0: sigmoid(0.2) * 0.5, 1: sigmoid(0.2) * 0.5,
            2: 0.5 * sigmoid(5.0), 3: 0.5 * sigmoid(-5.0),
        }
        assert sorted(prediction.labels) == [0, 1, 2, 3]
        for category, prob in prediction.ranked:
            assert prob == pytest.approx(expected[category], rel=1e-12)
        probs = [p for _, p in prediction.ranked]
        assert probs == sorted(probs, reverse=True)
        assert prediction.labels[1:3] == [0, 1]
        assert prediction.classifier_evaluations == 6

    def test_wide_beam_matches_exhaustive(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            tree = random_tree(rng, int(rng.integers(2, 25)), K=int(rng.integers(2, 5)), L=int(rng.integers(1, 4)),
                               seed=trial)
            model = random_model(rng, tree)
            x = rng.normal(size=4)
            beam = predict_nbest(model, x, beam=len(tree.leaves()))
            exhaustive = predict_exhaustive(model, x)
            assert beam.ranked == exhaustive.ranked

    def test_beam_one_is_greedy(self):
        rng = np.random.default_rng(1)
        for trial in range(30):
            tree = random_tree(rng, int(rng.integers(2, 25)), K=int(rng.integers(2, 5)), L=int(rng.integers(1, 4)),
                               seed=trial)
            model = random_model(rng, tree)
            x = rng.normal(size=4)
            assert predict_nbest(model, x, beam=1).top == predict_greedy(model, x).top

    def test_mixed_depth(self):
        model = bias_model(mixed_depth_tree(), {0: [0.0, 1.0], 2: [3.0, -3.0]})
        x = np.array([0.0])
        exhaustive = predict_exhaustive(model, x)
        assert exhaustive.top == 1
        assert predict_nbest(model, x, beam=2).ranked == exhaustive.ranked
        assert predict_nbest(model, x, beam=1).top == predict_greedy(model, x).top == 1
        assert dict(exhaustive.ranked)[0] == pytest.approx(0.5)

    def test_single_category_tree(self):
        tree = VisualTree(nodes=(TreeNode(0, 1, (0,)),), branching=2, max_depth=2, n_categories=1)
        model = TreeModel(tree=tree, classifiers=(), dim=3)
        for mode in ("greedy", "beam", "exhaustive"):
            prediction = predict([model], np.zeros(3), mode=mode)
            assert prediction.ranked == ((0, 1.0),)
            assert prediction.classifier_evaluations == 0

    def test_monotone_in_beam_width_on_two_level_trees(self):
        rng = np.random.default_rng(2)
        for trial in range(30):
            tree = random_tree(rng, int(rng.integers(4, 30)), K=int(rng.integers(2, 6)), L=2, seed=trial)
            model = random_model(rng, tree)
            x = rng.normal(size=4)
            greedy = predict_greedy(model, x).top_log_prob
            previous = -math.inf
            for beam in (1, 2, 3, 5, 8):
                best = predict_nbest(model, x, beam=beam).top_log_prob
                assert best >= previous - 1e-12
                assert best >= greedy - 1e-12
                previous = best

    def test_evaluations_within_budget(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            tree = random_tree(rng, int(rng.integers(2, 40)), K=int(rng.integers(2, 6)), L=int(rng.integers(1, 4)),
                               seed=trial)
            model = random_model(rng, tree)
            x = rng.normal(size=4)
            for beam in (1, 3, 6):
                assert predict_nbest(model, x, beam=beam).classifier_evaluations <= tree.beam_budget(beam)
            assert predict_exhaustive(model, x).classifier_evaluations == tree.n_edges

    def test_extreme_query_keeps_probabilities_positive(self):
        rng = np.random.default_rng(8)
        model = random_model(rng, random_tree(rng, 12, K=3, L=2))
        x = 1e4 * np.ones(4)
        for prediction in (predict_exhaustive(model, x), predict_nbest(model, x, beam=3)):
            assert min(p for _, p in prediction.ranked) > 0.0
            assert all(p <= 1.0 for _, p in prediction.ranked)
            assert all(np.isfinite(prediction.log_probs))
            assert min(prediction.log_probs) < -1000

    def test_invalid_queries(self):
        model = greedy_trap()
        with pytest.raises(DimensionError):
            predict_greedy(model, np.zeros(2))
        with pytest.raises(UsageError):
            predict_nbest(model, np.zeros(1), beam=0)
        with pytest.raises(UsageError):
            predict([model], np.zeros(1), mode="sideways")


class TestEnsemble:
    def test_average_of_path_probabilities(self):
        first = bias_model(flat_tree(2), {0: [logit(0.8), logit(0.1)]})
        second = bias_model(flat_tree(2), {0: [logit(0.2), logit(0.6)]})
        prediction = predict_ensemble([first, second], np.zeros(1), beam=2)
        assert prediction.labels == [0, 1]
        assert prediction.ranked[0][1] == pytest.approx(0.5)
        assert prediction.ranked[1][1] == pytest.approx(0.35)
        assert prediction.classifier_evaluations == 4

    def test_weights(self):
        first = bias_model(flat_tree(2), {0: [logit(0.8), logit(0.1)]})
        second = bias_model(flat_tree(2), {0: [logit(0.2), logit(0.6)]})
        prediction = predict_ensemble([first, second], np.zeros(1), beam=2, weights=[0.0, 1.0])
        assert prediction.labels == [1, 0]
        with pytest.raises(UsageError):
            predict_ensemble([first, second], np.zeros(1), weights=[1.0])

    def test_pruned_category_counts_as_zero(self):
        first = bias_model(two_level_tree(), {0: [2.0, -2.0], 1: [0.0, 0.0], 2: [0.0, 0.0]})
        second = bias_model(two_level_tree(), {0: [-2.0, 2.0], 1: [0.0, 0.0], 2: [0.0, 0.0]})
        prediction = predict_ensemble([first, second], np.zeros(1), beam=1)
        # cada árbol conserva sólo una rama; la otra mitad aporta 0
        assert prediction.labels == [0, 1, 2, 3]
        for _, prob in prediction.ranked:
            assert prob == pytest.approx(sigmoid(2.0) * 0.5 / 2)

    def test_identical_trees_match_single_tree(self):
        rng = np.random.default_rng(9)
        model = random_model(rng, random_tree(rng, 15, K=3, L=2))
        for _ in range(10):
            x = rng.normal(size=4)
            single = predict_nbest(model, x, beam=3)
            ensemble = predict_ensemble([model] * 4, x, beam=3)
            assert ensemble.labels == single.labels
            for (_, p), (_, q) in zip(ensemble.ranked, single.ranked):
                assert p == pytest.approx(q)

    def test_incompatible_models(self):
        a = bias_model(flat_tree(2), {0: [0.0, 0.0]})
        b = bias_model(flat_tree(3), {0: [0.0, 0.0, 0.0]})
        with pytest.raises(IncompatibleModelError):
            predict_ensemble([a, b], np.zeros(1))


if __name__ == "__main__":
    print("=" * 60)
    print("Testing Infer")
    print("=" * 60)
    sys.exit(pytest.main([__file__, "-q"]))
