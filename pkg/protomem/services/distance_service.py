import numpy as np
from protomem.core.exceptions import InvalidInputError
from protomem.models.body import BodyModel
from protomem.models.clustering import PartWeightMap


class DistanceService:
    """
    Расстояния между конфигурациями тела по вершинам в каноническом кадре модели.
    Выравнивание перед сравнением не выполняется.
    """

    @staticmethod
    def build_part_weights(model: BodyModel, weight_map: PartWeightMap) -> np.ndarray:
        """
        Вектор весов вершин W (V,): W[v] = weight_map[part_labels[v]].
        """
        weights = np.empty(model.num_vertices)
        for v, label in enumerate(model.part_labels):
            try:
                weights[v] = weight_map.weight_for(label)
            except ValueError:
                raise InvalidInputError(f"unknown part label '{label}' at vertex {v}")
        return weights

    @staticmethod
    def weighted_vertex_distance(verts_a: np.ndarray, verts_b: np.ndarray, weights: np.ndarray) -> float:
        """Квадрат L2-нормы поэлементно взвешенной разности ||(Va - Vb) o W||^2."""
        verts_a, verts_b, weights = DistanceService._check(verts_a, verts_b, weights)
        diff = (verts_a - verts_b) * weights[:, None]
        return float(np.sum(diff.reshape(-1) ** 2))

    @staticmethod
    def weighted_distance_matrix(verts: np.ndarray, centers: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """
        Матрица расстояний (N, K) между вершинами образцов (N, V, 3) и центров (K, V, 3).
        Каждый элемент считается так же, как weighted_vertex_distance, независимо от размера батча.
        """
        verts = np.asarray(verts, dtype=np.float64)
        centers = np.asarray(centers, dtype=np.float64)
        if verts.ndim != 3 or centers.ndim != 3 or verts.shape[1:] != centers.shape[1:]:
            raise InvalidInputError(f"vertex batches do not match: {verts.shape} vs {centers.shape}")
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (verts.shape[1],):
            raise InvalidInputError(f"weights must have shape ({verts.shape[1]},), got {weights.shape}")

        n = verts.shape[0]
        out = np.empty((n, centers.shape[0]))
        for k in range(centers.shape[0]):
            diff = (verts - centers[k][None]) * weights[None, :, None]
            out[:, k] = np.sum((diff**2).reshape(n, -1), axis=1)
        return out

    @staticmethod
    def unweighted_vertex_rmsd(verts_a: np.ndarray, verts_b: np.ndarray) -> float:
        """Корень из среднего квадрата евклидова расстояния между соответствующими вершинами."""
        verts_a = np.asarray(verts_a, dtype=np.float64)
        verts_b = np.asarray(verts_b, dtype=np.float64)
        if verts_a.shape != verts_b.shape or verts_a.ndim != 2 or verts_a.shape[1] != 3:
            raise InvalidInputError(f"vertex sets do not match: {verts_a.shape} vs {verts_b.shape}")
        return float(np.sqrt(np.mean(np.sum((verts_a - verts_b) ** 2, axis=1))))

    @staticmethod
    def _check(verts_a, verts_b, weights):
        verts_a = np.asarray(verts_a, dtype=np.float64)
        verts_b = np.asarray(verts_b, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if verts_a.shape != verts_b.shape or verts_a.ndim != 2 or verts_a.shape[1] != 3:
            raise InvalidInputError(f"vertex sets do not match: {verts_a.shape} vs {verts_b.shape}")
        if weights.shape != (verts_a.shape[0],):
            raise InvalidInputError(f"weights must have shape ({verts_a.shape[0]},), got {weights.shape}")
        if np.any(weights < 0):
            raise InvalidInputError("weights must be nonnegative")
        return verts_a, verts_b, weights

