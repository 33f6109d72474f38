from typing import List, Optional, Tuple
import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score
from protomem.core.config import settings
from protomem.core.exceptions import AmbiguousAverageError, CenterUpdateError, InvalidInputError
from protomem.models.body import BodyParams, split_flat, stack_params
from protomem.models.clustering import ClusterConfig, ClusterResult, ClusterVariant, PartWeightMap
from protomem.services import rotations
from protomem.services.body_model_service import BodyModelService
from protomem.services.distance_service import DistanceService


class ClusteringService:
    """
    Part-aware 3D Human K-Means и его абляционные варианты.
    Оркестрирует процесс: инициализация -> назначение по вершинам -> обновление центров -> контроль остановки.
    """

    def __init__(self, body_service: BodyModelService, n_jobs: int = settings.THREADS):
        self._body = body_service
        self._n_jobs = max(1, int(n_jobs))

    # --- Шаги алгоритма ---

    @staticmethod
    def init_centers(samples: List[BodyParams], K: int, seed: int) -> List[BodyParams]:
        """
        Случайно выбирает K различных образцов (без возвращения) детерминированным генератором.
        """
        indices = ClusteringService.draw_center_indices(len(samples), K, seed)
        return [samples[i].model_copy(deep=True) for i in indices]

    @staticmethod
    def draw_center_indices(n_samples: int, K: int, seed: int) -> np.ndarray:
        if K < 1:
            raise InvalidInputError("K must be >= 1")
        if n_samples < K:
            raise InvalidInputError(f"cannot draw {K} centers from {n_samples} samples")
        rng = np.random.default_rng(seed)
        return rng.choice(n_samples, size=K, replace=False)

    def assign_samples(
        self, samples: List[BodyParams], centers: List[BodyParams], weights: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Назначает каждый образец ближайшему центру по взвешенному расстоянию между вершинами.
        Вершины центров считаются один раз за вызов. При равенстве выбирается меньший индекс.
        """
        if not samples or not centers:
            raise InvalidInputError("samples and centers must be nonempty")
        sample_verts, _ = self._body.forward_params(samples)
        return self._assign_vertices(sample_verts, centers, weights)

    def update_centers(
        self,
        samples: List[BodyParams],
        assignments: np.ndarray,
        K: int,
        distances: Optional[np.ndarray] = None,
    ) -> List[BodyParams]:
        """
        Пересчитывает центры: форма - среднее арифметическое, поза - усреднение кватернионов
        по каждому суставу отдельно с возвратом в 6D.
        Пустой кластер получает образец с наибольшим текущим расстоянием до своего центра.
        """
        assignments = np.asarray(assignments, dtype=np.int64)
        n = len(samples)
        if assignments.shape != (n,) or (n and (assignments.min() < 0 or assignments.max() >= K)):
            raise InvalidInputError(f"assignments must be {n} indices in [0, {K})")
        distances = np.zeros(n) if distances is None else np.asarray(distances, dtype=np.float64)

        poses, shapes = split_flat(stack_params(samples))
        members = [np.flatnonzero(assignments == j) for j in range(K)]

        # Кандидаты на пересев: по убыванию расстояния, при равенстве - по индексу
        farthest = list(np.lexsort((np.arange(n), -distances)))
        for j in range(K):
            if members[j].size == 0:
                donor = farthest.pop(0)
                logger.warning(f"Кластер {j} пуст, центр пересеян образцом {donor}")
                members[j] = np.array([donor])

        jobs = (delayed(self._average_cluster)(poses[idx], shapes[idx], j) for j, idx in enumerate(members))
        return Parallel(n_jobs=self._n_jobs, prefer="threads")(jobs)

    # --- Варианты алгоритма ---

    def cluster(self, samples: List[BodyParams], config: ClusterConfig) -> ClusterResult:
        if config.variant == ClusterVariant.NAIVE_PARAMS:
            return self.naive_kmeans(samples, config)
        return self.p3dh_kmeans(samples, config)

    def p3dh_kmeans(self, samples: List[BodyParams], config: ClusterConfig) -> ClusterResult:
        """
        Основной цикл: пока среднее расстояние выше gamma_hat и бюджет итераций не исчерпан,
        назначение и обновление центров чередуются. После цикла - финальное назначение.
        При n_init > 1 запуски идут с seed, seed+1, ... и выбирается запуск с наименьшим средним расстоянием.
        """
        if config.variant == ClusterVariant.NAIVE_PARAMS:
            raise InvalidInputError("naive_params variant is handled by naive_kmeans")
        self.draw_center_indices(len(samples), config.K, config.seed)

        weights = self.weights_for(config)
        logger.info(
            f"Кластеризация {config.variant.value}: N={len(samples)}, K={config.K}, "
            f"gamma_hat={config.gamma_hat}, lambda_hat={config.lambda_hat}"
        )
        sample_verts, _ = self._body.forward_params(samples)

        best: Optional[ClusterResult] = None
        for run in range(config.n_init):
            result = self._run_once(samples, sample_verts, weights, config, config.seed + run)
            if best is None or result.mean_distance < best.mean_distance:
                best = result
        logger.info(f"Кластеризация завершена: среднее расстояние {best.mean_distance:.6g}")
        return best

    def naive_kmeans(self, samples: List[BodyParams], config: ClusterConfig) -> ClusterResult:
        """
        Обычный K-Means (Ллойд) по плоским 154-мерным векторам параметров.
        Блоки позы усредняются как числа и не переортогонализуются.
        След, как и в P3DH, - среднее расстояние до центров до их обновления.
        """
        X = stack_params(samples)
        K, N = config.K, len(samples)
        best: Optional[ClusterResult] = None
        for run in range(config.n_init):
            seed = config.seed + run
            centers = X[self.draw_center_indices(N, K, seed)]
            gamma_bar, iteration, trace = np.inf, 0, []
            while gamma_bar > config.gamma_hat and iteration < config.lambda_hat:
                gamma_bar = float(np.mean(self._squared_distances(X, centers).min(axis=1)))
                km = KMeans(n_clusters=K, init=centers, n_init=1, max_iter=1, algorithm="lloyd", random_state=seed)
                km.fit(X)
                stable = np.array_equal(km.cluster_centers_, centers)
                centers = km.cluster_centers_
                trace.append(gamma_bar)
                iteration += 1
                logger.debug(f"naive K-Means, итерация {iteration}: gamma_bar={gamma_bar:.6g}")
                if config.stop_when_stable and stable:
                    break

            sq = self._squared_distances(X, centers)
            assignments = np.argmin(sq, axis=1)
            result = ClusterResult(
                centers=[BodyParams.from_flat_raw(row) for row in centers],
                assignments=assignments,
                distances=sq[np.arange(N), assignments],
                trace=trace,
                config=config,
            )
            if best is None or result.mean_distance < best.mean_distance:
                best = result
        return best

    # --- Вспомогательные методы ---

    def weights_for(self, config: ClusterConfig) -> np.ndarray:
        """P3DH использует веса частей тела; 3DH и Random Center - равномерные."""
        weight_map = config.part_weight_map if config.variant == ClusterVariant.P3DH else PartWeightMap.uniform()
        return DistanceService.build_part_weights(self._body.model, weight_map)

    @staticmethod
    def adjusted_rand_index(labels_true, labels_pred) -> float:
        return float(adjusted_rand_score(labels_true, labels_pred))

    def _run_once(
        self,
        samples: List[BodyParams],
        sample_verts: np.ndarray,
        weights: np.ndarray,
        config: ClusterConfig,
        seed: int,
    ) -> ClusterResult:
        centers = self.init_centers(samples, config.K, seed)

        if config.variant == ClusterVariant.RANDOM_CENTER:
            assignments, distances = self._assign_vertices(sample_verts, centers, weights)
            return ClusterResult(
                centers=centers,
                assignments=assignments,
                distances=distances,
                trace=[float(np.mean(distances))],
                config=config,
            )

        gamma_bar, iteration, trace = np.inf, 0, []
        previous = None
        while gamma_bar > config.gamma_hat and iteration < config.lambda_hat:
            assignments, distances = self._assign_vertices(sample_verts, centers, weights)
            try:
                centers = self.update_centers(samples, assignments, config.K, distances)
            except CenterUpdateError as e:
                logger.error(f"Сбой обновления центров на итерации {iteration}: {e}")
                raise e.at_iteration(iteration) from e
            gamma_bar = float(np.mean(distances))
            trace.append(gamma_bar)
            iteration += 1
            logger.info(f"Итерация {iteration}: gamma_bar={gamma_bar:.6g}")
            if config.stop_when_stable and previous is not None and np.array_equal(previous, assignments):
                break
            previous = assignments

        assignments, distances = self._assign_vertices(sample_verts, centers, weights)
        return ClusterResult(centers=centers, assignments=assignments, distances=distances, trace=trace, config=config)

    def _assign_vertices(
        self, sample_verts: np.ndarray, centers: List[BodyParams], weights: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        center_verts, _ = self._body.forward_params(centers)
        chunks = np.array_split(np.arange(sample_verts.shape[0]), self._n_jobs)
        jobs = (
            delayed(DistanceService.weighted_distance_matrix)(sample_verts[idx], center_verts, weights)
            for idx in chunks
            if idx.size
        )
        matrix = np.concatenate(Parallel(n_jobs=self._n_jobs, prefer="threads")(jobs), axis=0)
        assignments = np.argmin(matrix, axis=1)
        return assignments, matrix[np.arange(matrix.shape[0]), assignments]

    @staticmethod
    def _squared_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
        return ((X[:, None, :] - centers[None]) ** 2).sum(axis=-1)

    @staticmethod
    def _average_cluster(poses: np.ndarray, shapes: np.ndarray, cluster: int) -> BodyParams:
        quats = rotations.rotmat_to_quat(rotations.rot6d_to_rotmat(poses))
        try:
            mean_quats = rotations.average_quaternions(quats)
        except AmbiguousAverageError as e:
            raise CenterUpdateError(cluster=cluster, joint=e.joint if e.joint is not None else -1, reason=str(e))
        pose = rotations.rotmat_to_rot6d(rotations.quat_to_rotmat(mean_quats))
        return BodyParams(pose=pose, shape=shapes.mean(axis=0))
