import numpy as np
import pytest
from protomem.core.exceptions import InvalidInputError
from protomem.models.body import PartLabel
from protomem.models.clustering import PartWeightMap
from protomem.services.distance_service import DistanceService


class TestPartWeights:
    def test_default_map(self, toy_model):
        W = DistanceService.build_part_weights(toy_model, PartWeightMap())
        labels = np.array([p.value for p in toy_model.part_labels])
        assert np.all(W[labels == "limb"] == 5.0)
        assert np.all(W[labels == "torso"] == 1.0)
        assert np.all(W[labels == "foot"] == 0.5)
        assert np.all(W[labels == "head"] == 0.3)
        assert np.all(W[labels == "hand"] == 0.3)

    def test_uniform_map(self, toy_model):
        W = DistanceService.build_part_weights(toy_model, PartWeightMap.uniform())
        assert np.all(W == 1.0)

    def test_zero_torso_weight(self, toy_model):
        W = DistanceService.build_part_weights(toy_model, PartWeightMap(torso=0.0))
        torso = np.array([p == PartLabel.TORSO for p in toy_model.part_labels])
        a = np.zeros((toy_model.num_vertices, 3))
        b = a.copy()
        b[torso] += 1.0
        assert DistanceService.weighted_vertex_distance(a, b, W) == 0.0

    def test_all_zero_map_rejected(self):
        with pytest.raises(ValueError):
            PartWeightMap(limb=0, head=0, hand=0, foot=0, torso=0)


class TestWeightedDistance:
    def test_identical(self):
        v = np.random.default_rng(0).standard_normal((12, 3))
        assert DistanceService.weighted_vertex_distance(v, v, np.ones(12)) == 0.0

    def test_unit_and_limb_weight(self):
        a = np.zeros((4, 3))
        b = a.copy()
        b[2] = [1.0, 0.0, 0.0]
        assert DistanceService.weighted_vertex_distance(a, b, np.ones(4)) == 1.0
        W = np.ones(4)
        W[2] = 5.0
        assert DistanceService.weighted_vertex_distance(a, b, W) == 25.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b, W = rng.standard_normal((20, 3)), rng.standard_normal((20, 3)), rng.uniform(0, 5, 20)
        assert DistanceService.weighted_vertex_distance(a, b, W) == DistanceService.weighted_vertex_distance(b, a, W)

    def test_monotone_in_weights(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
            W = rng.uniform(0, 5, 30)
            heavier = W + rng.uniform(0, 2, 30)
            assert DistanceService.weighted_vertex_distance(a, b, heavier) >= DistanceService.weighted_vertex_distance(
                a, b, W
            )

    def test_raising_limb_weight_never_shrinks_distance(self, toy_model):
        rng = np.random.default_rng(6)
        a = toy_model.template + 0.01 * rng.standard_normal(toy_model.template.shape)
        b = toy_model.template
        light = DistanceService.build_part_weights(toy_model, PartWeightMap(limb=1.0))
        heavy = DistanceService.build_part_weights(toy_model, PartWeightMap(limb=10.0))
        assert DistanceService.weighted_vertex_distance(a, b, heavy) > DistanceService.weighted_vertex_distance(
            a, b, light
        )

    def test_mismatch(self):
        with pytest.raises(InvalidInputError):
            DistanceService.weighted_vertex_distance(np.zeros((4, 3)), np.zeros((5, 3)), np.ones(4))
        with pytest.raises(InvalidInputError):
            DistanceService.weighted_vertex_distance(np.zeros((4, 3)), np.zeros((4, 3)), np.ones(3))

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(2)
        verts, centers, W = rng.standard_normal((7, 30, 3)), rng.standard_normal((4, 30, 3)), rng.uniform(0, 5, 30)
        matrix = DistanceService.weighted_distance_matrix(verts, centers, W)
        for i in range(7):
            for k in range(4):
                expected = DistanceService.weighted_vertex_distance(verts[i], centers[k], W)
                np.testing.assert_allclose(matrix[i, k], expected, rtol=1e-12, atol=1e-12)


class TestRmsd:
    def test_identical_and_shift(self):
        v = np.random.default_rng(3).standard_normal((50, 3))
        assert DistanceService.unweighted_vertex_rmsd(v, v) == 0.0
        shift = np.array([0.01, 0.0, 0.0])
        assert DistanceService.unweighted_vertex_rmsd(v + shift, v) == pytest.approx(0.01, abs=1e-12)

    def test_loop_oracle(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((40, 3)), rng.standard_normal((40, 3))
        total = 0.0
        for i in range(40):
            total += sum((a[i, c] - b[i, c]) ** 2 for c in range(3))
        expected = np.sqrt(total / 40)
        assert DistanceService.unweighted_vertex_rmsd(a, b) == pytest.approx(expected, abs=1e-12)
