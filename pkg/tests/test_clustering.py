import numpy as np
import pytest
from conftest import covering_seed, limb_dominant_samples, random_params
from protomem.core.exceptions import CenterUpdateError, DegenerateInputError, InvalidInputError, MemoryBuildError
from protomem.models.body import NUM_BETAS, NUM_JOINTS, BodyParams
from protomem.models.clustering import ClusterConfig, ClusterResultFile, ClusterVariant, PartWeightMap
from protomem.services import rotations
from protomem.services.clustering_service import ClusteringService
from protomem.services.dataset_service import DatasetService
from protomem.services.distance_service import DistanceService
from protomem.services.memory_service import MemoryService


def root_rotated(aa, shape=None) -> BodyParams:
    pose = BodyParams.identity().pose.copy()
    pose[0] = rotations.rotmat_to_rot6d(rotations.axis_angle_to_rotmat(aa))
    return BodyParams(pose=pose, shape=np.zeros(NUM_BETAS) if shape is None else np.asarray(shape, dtype=float))


class TestInitCenters:
    def test_all_samples_when_k_equals_n(self):
        rng = np.random.default_rng(0)
        samples = [random_params(rng) for _ in range(6)]
        idx = ClusteringService.draw_center_indices(6, 6, seed=3)
        centers = ClusteringService.init_centers(samples, 6, seed=3)
        assert sorted(idx.tolist()) == list(range(6))
        for i, c in zip(idx, centers):
            assert np.array_equal(c.flatten(), samples[i].flatten())

    def test_seeded(self):
        assert np.array_equal(
            ClusteringService.draw_center_indices(100, 10, 0), ClusteringService.draw_center_indices(100, 10, 0)
        )
        assert not np.array_equal(
            ClusteringService.draw_center_indices(100, 10, 0), ClusteringService.draw_center_indices(100, 10, 1)
        )

    def test_too_few_samples(self):
        with pytest.raises(InvalidInputError):
            ClusteringService.draw_center_indices(3, 4, 0)


class TestAssign:
    @pytest.fixture
    def service(self, body):
        return ClusteringService(body)

    def test_sample_equal_to_center(self, service, body):
        rng = np.random.default_rng(1)
        centers = [random_params(rng) for _ in range(3)]
        W = DistanceService.build_part_weights(body.model, PartWeightMap())
        assignments, distances = service.assign_samples([centers[2]], centers, W)
        assert assignments[0] == 2
        assert distances[0] == pytest.approx(0.0, abs=1e-12)

    def test_single_center(self, service, body):
        rng = np.random.default_rng(2)
        samples = [random_params(rng) for _ in range(8)]
        W = DistanceService.build_part_weights(body.model, PartWeightMap())
        assignments, _ = service.assign_samples(samples, [samples[0]], W)
        assert np.all(assignments == 0)

    @pytest.mark.parametrize("threads", [1, 3, 8])
    def test_matches_double_loop(self, body, threads):
        rng = np.random.default_rng(3)
        samples = [random_params(rng) for _ in range(50)]
        centers = [random_params(rng) for _ in range(5)]
        W = DistanceService.build_part_weights(body.model, PartWeightMap())
        assignments, distances = ClusteringService(body, n_jobs=threads).assign_samples(samples, centers, W)

        center_verts = [body.forward(c)[0] for c in centers]
        for i, s in enumerate(samples):
            verts, _ = body.forward(s)
            gammas = [DistanceService.weighted_vertex_distance(verts, cv, W) for cv in center_verts]
            assert assignments[i] == int(np.argmin(gammas))
            np.testing.assert_allclose(distances[i], min(gammas), rtol=1e-12, atol=1e-12)

    def test_generators_recover_labels(self, service, body, corpus):
        records, labels = corpus
        generators, _ = DatasetService(body).gen_samples(seed=0, n=3, clusters=3, noise=0.0)
        W = DistanceService.build_part_weights(body.model, PartWeightMap())
        assignments, _ = service.assign_samples(
            DatasetService.to_params(records), DatasetService.to_params(generators), W
        )
        assert np.array_equal(assignments, labels)


class TestUpdateCenters:
    @pytest.fixture
    def service(self, body):
        return ClusteringService(body)

    def test_identical_members(self, service):
        sample = random_params(np.random.default_rng(4))
        center = service.update_centers([sample] * 4, np.zeros(4, dtype=int), 1)[0]
        np.testing.assert_allclose(center.flatten(), sample.flatten(), atol=1e-9)

    def test_geodesic_midpoint_of_root(self, service):
        members = [root_rotated([0, 0, 0]), root_rotated([0, 0, np.pi / 2])]
        center = service.update_centers(members, np.zeros(2, dtype=int), 1)[0]
        expected = rotations.rotmat_to_rot6d(rotations.axis_angle_to_rotmat([0, 0, np.pi / 4]))
        np.testing.assert_allclose(center.pose[0], expected, atol=1e-6)

    def test_shape_mean(self, service):
        e1 = np.eye(NUM_BETAS)[0]
        members = [root_rotated([0, 0, 0], e1), root_rotated([0, 0, 0], -e1)]
        center = service.update_centers(members, np.zeros(2, dtype=int), 1)[0]
        np.testing.assert_array_equal(center.shape, np.zeros(NUM_BETAS))

    def test_empty_cluster_takes_farthest_sample(self, service):
        rng = np.random.default_rng(5)
        samples = [random_params(rng) for _ in range(4)]
        distances = np.array([0.1, 3.0, 0.2, 0.5])
        centers = service.update_centers(samples, np.zeros(4, dtype=int), 2, distances)
        np.testing.assert_allclose(centers[1].flatten(), samples[1].flatten(), atol=1e-9)

    def test_ambiguous_average_names_cluster_and_joint(self, service):
        members = [root_rotated([np.pi, 0, 0]), root_rotated([0, np.pi, 0])]
        with pytest.raises(CenterUpdateError) as exc:
            service.update_centers(members, np.zeros(2, dtype=int), 1)
        assert exc.value.cluster == 0
        assert exc.value.joint == 0

    def test_bad_assignments(self, service):
        sample = random_params(np.random.default_rng(6))
        with pytest.raises(InvalidInputError):
            service.update_centers([sample], np.array([2]), 2)


class TestP3dhKMeans:
    @pytest.fixture
    def service(self, body):
        return ClusteringService(body)

    def test_single_center_is_global_average(self, service):
        rng = np.random.default_rng(7)
        samples = [random_params(rng, angle=0.3) for _ in range(10)]
        result = service.cluster(samples, ClusterConfig(K=1, lambda_hat=3))
        poses = np.stack([s.pose for s in samples])
        quats = rotations.rotmat_to_quat(rotations.rot6d_to_rotmat(poses))
        expected_pose = rotations.rotmat_to_rot6d(rotations.quat_to_rotmat(rotations.average_quaternions(quats)))
        np.testing.assert_allclose(result.centers[0].pose, expected_pose, atol=1e-9)
        np.testing.assert_allclose(result.centers[0].shape, np.mean([s.shape for s in samples], axis=0), atol=1e-12)
        assert np.all(result.assignments == 0)

    def test_recovers_synthetic_clusters(self, service, corpus):
        records, labels = corpus
        seed = covering_seed(labels, 3)
        result = service.cluster(DatasetService.to_params(records), ClusterConfig(K=3, lambda_hat=20, seed=seed))
        assert service.adjusted_rand_index(labels, result.assignments) == 1.0
        assert len(result.trace) == 20

    def test_limb_dominant_instance_beats_naive(self, service):
        samples, labels = limb_dominant_samples()
        seed = covering_seed(labels, 3)
        p3dh = service.cluster(samples, ClusterConfig(K=3, lambda_hat=10, seed=seed))
        naive = service.cluster(
            samples, ClusterConfig(K=3, lambda_hat=10, seed=seed, variant=ClusterVariant.NAIVE_PARAMS)
        )
        assert service.adjusted_rand_index(labels, p3dh.assignments) == 1.0
        assert service.adjusted_rand_index(labels, naive.assignments) < 1.0

    def test_random_center_single_pass(self, service):
        rng = np.random.default_rng(8)
        samples = [random_params(rng) for _ in range(20)]
        config = ClusterConfig(K=4, seed=2, variant=ClusterVariant.RANDOM_CENTER)
        result = service.cluster(samples, config)
        expected = ClusteringService.init_centers(samples, 4, 2)
        for got, want in zip(result.centers, expected):
            assert np.array_equal(got.flatten(), want.flatten())
        assert len(result.trace) == 1

    def test_stop_when_stable(self, service, corpus):
        records, labels = corpus
        config = ClusterConfig(K=3, lambda_hat=50, seed=covering_seed(labels, 3), stop_when_stable=True)
        result = service.cluster(DatasetService.to_params(records), config)
        assert len(result.trace) < 50

    def test_n_init_keeps_best_run(self, service):
        rng = np.random.default_rng(9)
        samples = [random_params(rng) for _ in range(30)]
        single = service.cluster(samples, ClusterConfig(K=4, lambda_hat=5, seed=0))
        multi = service.cluster(samples, ClusterConfig(K=4, lambda_hat=5, seed=0, n_init=3))
        assert multi.mean_distance <= single.mean_distance

    def test_thread_count_does_not_change_result(self, body):
        rng = np.random.default_rng(10)
        samples = [random_params(rng) for _ in range(40)]
        config = ClusterConfig(K=5, lambda_hat=4, seed=1)
        one = ClusteringService(body, n_jobs=1).cluster(samples, config)
        many = ClusteringService(body, n_jobs=8).cluster(samples, config)
        assert np.array_equal(one.assignments, many.assignments)
        assert np.array_equal(one.distances, many.distances)
        for a, b in zip(one.centers, many.centers):
            assert np.array_equal(a.flatten(), b.flatten())

    def test_center_failure_reports_iteration(self, service):
        members = [root_rotated([np.pi, 0, 0]), root_rotated([0, np.pi, 0])]
        with pytest.raises(CenterUpdateError) as exc:
            service.cluster(members, ClusterConfig(K=1, lambda_hat=1))
        assert exc.value.iteration == 0


class TestNaiveKMeans:
    @pytest.fixture
    def service(self, body):
        return ClusteringService(body)

    def test_identical_samples(self, service):
        sample = random_params(np.random.default_rng(11))
        result = service.cluster([sample] * 5, ClusterConfig(K=1, lambda_hat=2, variant=ClusterVariant.NAIVE_PARAMS))
        np.testing.assert_allclose(result.centers[0].flatten(), sample.flatten(), atol=1e-12)

    def test_single_center_is_coordinate_mean(self, service):
        rng = np.random.default_rng(12)
        samples = [random_params(rng) for _ in range(9)]
        result = service.cluster(samples, ClusterConfig(K=1, lambda_hat=2, variant=ClusterVariant.NAIVE_PARAMS))
        mean = np.mean([s.flatten() for s in samples], axis=0)
        np.testing.assert_allclose(result.centers[0].flatten(), mean, atol=1e-12)

    def test_raw_pose_mean_is_not_a_rotation(self, service):
        members = [root_rotated([0, 0, 0]), root_rotated([0, 0, np.pi / 2])]
        naive = service.cluster(members, ClusterConfig(K=1, lambda_hat=1, variant=ClusterVariant.NAIVE_PARAMS))
        markley = service.update_centers(members, np.zeros(2, dtype=int), 1)[0]
        raw_block = naive.centers[0].pose[0]
        assert np.linalg.norm(raw_block[:3]) < 1.0 - 1e-3
        assert not np.allclose(raw_block, markley.pose[0], atol=1e-6)

    def test_degenerate_raw_mean_is_kept(self, service, body):
        members = [root_rotated([0, 0, 0]), root_rotated([0, 0, np.pi])]
        result = service.cluster(members, ClusterConfig(K=1, lambda_hat=1, variant=ClusterVariant.NAIVE_PARAMS))
        np.testing.assert_allclose(result.centers[0].pose[0], np.zeros(6), atol=1e-12)

        restored = ClusterResultFile.from_result(result).to_result()
        assert np.array_equal(restored.centers[0].flatten(), result.centers[0].flatten())
        # Case 1: the raw block cannot be decoded by the forward pass
        with pytest.raises(DegenerateInputError):
            service.assign_samples(members, result.centers, np.ones(body.model.num_vertices))
        # Case 2: the memory refuses the row
        with pytest.raises(MemoryBuildError) as exc:
            MemoryService.build_memory(result)
        assert exc.value.row == 0

    def test_trace_measures_pre_update_centers(self, service):
        rng = np.random.default_rng(14)
        samples = [random_params(rng) for _ in range(6)]
        X = np.stack([s.flatten() for s in samples])
        first = X[ClusteringService.draw_center_indices(6, 1, 0)[0]]
        result = service.cluster(samples, ClusterConfig(K=1, lambda_hat=2, variant=ClusterVariant.NAIVE_PARAMS))
        assert result.trace[0] == pytest.approx(np.mean(np.sum((X - first) ** 2, axis=1)), rel=1e-12)
        assert result.trace[1] == pytest.approx(np.mean(np.sum((X - X.mean(axis=0)) ** 2, axis=1)), rel=1e-9)
        assert result.trace[1] <= result.trace[0]


class TestPartWeightsInVariants:
    def test_only_p3dh_uses_part_weights(self, body):
        service = ClusteringService(body)
        p3dh = service.weights_for(ClusterConfig(variant=ClusterVariant.P3DH))
        uniform = service.weights_for(ClusterConfig(variant=ClusterVariant.UNIFORM_3DH))
        assert p3dh.max() == 5.0
        assert np.all(uniform == 1.0)
        assert uniform.shape == (NUM_JOINTS * 10,)

    def test_uniform_map_p3dh_matches_3dh(self, body):
        rng = np.random.default_rng(13)
        samples = [random_params(rng) for _ in range(30)]
        service = ClusteringService(body)
        p3dh = service.cluster(samples, ClusterConfig(K=3, lambda_hat=4, part_weight_map=PartWeightMap.uniform()))
        uniform = service.cluster(samples, ClusterConfig(K=3, lambda_hat=4, variant=ClusterVariant.UNIFORM_3DH))
        assert np.array_equal(p3dh.assignments, uniform.assignments)
        assert np.array_equal(p3dh.distances, uniform.distances)
        assert p3dh.trace == uniform.trace
        for a, b in zip(p3dh.centers, uniform.centers):
            assert np.array_equal(a.flatten(), b.flatten())
