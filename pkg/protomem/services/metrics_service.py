import math
from typing import List, Optional, Sequence
import numpy as np
from loguru import logger
from protomem.core.config import settings
from protomem.core.exceptions import AlignmentError, InvalidInputError
from protomem.models.body import BodyParams
from protomem.models.reports import BucketReport, BucketRow, MetricReport, TailSubset
from protomem.services.body_model_service import BodyModelService
from protomem.services.distance_service import DistanceService


class MetricsService:
    """
    Метрики реконструкции (MPVPE, MPJPE, PA-MPJPE) и разбиение выборки по расстоянию
    до единственного прототипа. Внутри метры, в отчётах миллиметры.
    """

    def __init__(self, body_service: Optional[BodyModelService] = None):
        self._body = body_service

    # --- Базовые метрики ---

    @staticmethod
    def mpvpe(pred: np.ndarray, gt: np.ndarray) -> float:
        """Среднее евклидово расстояние между соответствующими вершинами, мм."""
        pred, gt = MetricsService._check_points(pred, gt)
        return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * settings.MM_PER_M)

    @staticmethod
    def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
        """То же по суставам, мм."""
        pred, gt = MetricsService._check_points(pred, gt)
        return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * settings.MM_PER_M)

    @staticmethod
    def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
        """
        Подобие (поворот, равномерный масштаб, сдвиг), минимизирующее сумму квадратов расстояний до gt.
        Решение в замкнутом виде через SVD ковариации; отражения исключены (det R = +1).
        :raises AlignmentError: для вырожденной конфигурации точек.
        """
        pred, gt = MetricsService._check_points(pred, gt)
        n, dim = pred.shape
        if n < 3:
            raise AlignmentError("Procrustes alignment needs at least 3 points")

        mu_pred, mu_gt = pred.mean(axis=0), gt.mean(axis=0)
        pred_c, gt_c = pred - mu_pred, gt - mu_gt
        var_pred = np.sum(pred_c**2) / n
        if var_pred <= settings.DEGENERATE_EPS or np.sum(gt_c**2) / n <= settings.DEGENERATE_EPS:
            raise AlignmentError("point set has no spread")

        cov = gt_c.T @ pred_c / n
        u, d, vt = np.linalg.svd(cov)
        if np.count_nonzero(d > d[0] * 1e-12) < dim - 1:
            raise AlignmentError("degenerate covariance rank, Procrustes alignment is not possible")

        s = np.eye(dim)
        if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
            s[-1, -1] = -1.0
        rot = u @ s @ vt
        scale = np.trace(np.diag(d) @ s) / var_pred
        return scale * pred_c @ rot.T + mu_gt

    @staticmethod
    def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
        return MetricsService.mpjpe(MetricsService.procrustes_align(pred, gt), gt)

    # --- Пакетные метрики ---

    def per_sample_metrics(self, preds: List[BodyParams], gts: List[BodyParams]) -> np.ndarray:
        """Матрица (N, 3): MPVPE, MPJPE, PA-MPJPE каждого образца, мм."""
        if len(preds) != len(gts):
            raise InvalidInputError(f"got {len(preds)} predictions for {len(gts)} ground-truth samples")
        if not gts:
            return np.zeros((0, 3))
        body = self._require_body()
        pred_verts, pred_joints = body.forward_params(preds)
        gt_verts, gt_joints = body.forward_params(gts)
        return np.array(
            [
                [
                    self.mpvpe(pred_verts[i], gt_verts[i]),
                    self.mpjpe(pred_joints[i], gt_joints[i]),
                    self.pa_mpjpe(pred_joints[i], gt_joints[i]),
                ]
                for i in range(len(gts))
            ]
        )

    def evaluate(self, preds: List[BodyParams], gts: List[BodyParams]) -> MetricReport:
        return self.aggregate(self.per_sample_metrics(preds, gts))

    @staticmethod
    def aggregate(per_sample: np.ndarray) -> MetricReport:
        if per_sample.shape[0] == 0:
            return MetricReport(mpvpe=0.0, mpjpe=0.0, pa_mpjpe=0.0, count=0)
        mean = per_sample.mean(axis=0)
        return MetricReport(mpvpe=float(mean[0]), mpjpe=float(mean[1]), pa_mpjpe=float(mean[2]), count=len(per_sample))

    # --- Хвостовые классы ---

    @staticmethod
    def tail_indices(distances: Sequence[float], percent: float) -> List[int]:
        """
        Индексы x% образцов с наибольшими расстояниями, по убыванию; равные расстояния - по индексу.
        """
        if not 0 < percent <= 100:
            raise InvalidInputError("tail percent must lie in (0, 100]")
        d = np.asarray(distances, dtype=np.float64)
        order = np.lexsort((np.arange(d.size), -d))
        count = math.ceil(d.size * percent / 100.0 - 1e-9)
        return [int(i) for i in order[:count]]

    def prototype_distances(self, samples: List[BodyParams], singular: BodyParams) -> np.ndarray:
        """Невзвешенный RMSD вершин каждого образца до единственного прототипа, м."""
        body = self._require_body()
        if not samples:
            return np.zeros(0)
        verts, _ = body.forward_params(samples)
        proto_verts, _ = body.forward(singular)
        return np.array([DistanceService.unweighted_vertex_rmsd(v, proto_verts) for v in verts])

    def bucket_by_prototype_distance(
        self,
        samples: List[BodyParams],
        singular: BodyParams,
        edges: Sequence[float],
        predictions: Optional[List[BodyParams]] = None,
        tail_percents: Optional[Sequence[float]] = None,
    ) -> BucketReport:
        """
        Гистограмма по корзинам [edge_i, edge_{i+1}). Значения ниже первой границы попадают в первую корзину,
        не меньше последней - в последнюю, так что сумма счётчиков равна числу образцов.
        Если переданы предсказания, метрики агрегируются по корзинам и хвостам.
        """
        edges = [float(e) for e in edges]
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise InvalidInputError("bucket edges must be at least two strictly increasing values")
        tail_percents = settings.TAIL_PERCENTS if tail_percents is None else list(tail_percents)

        distances = self.prototype_distances(samples, singular)
        per_sample = self.per_sample_metrics(predictions, samples) if predictions is not None else None

        n_buckets = len(edges) - 1
        bucket_of = np.clip(np.searchsorted(edges, distances, side="right") - 1, 0, n_buckets - 1)
        buckets = []
        for b in range(n_buckets):
            idx = [int(i) for i in np.flatnonzero(bucket_of == b)]
            metrics = self.aggregate(per_sample[idx]) if per_sample is not None and idx else None
            buckets.append(BucketRow(low=edges[b], high=edges[b + 1], count=len(idx), indices=idx, metrics=metrics))

        tails = []
        for percent in tail_percents:
            idx = self.tail_indices(distances, percent) if len(samples) else []
            metrics = self.aggregate(per_sample[idx]) if per_sample is not None and idx else None
            tails.append(TailSubset(percent=percent, indices=idx, metrics=metrics))

        logger.info(f"Разбиение по корзинам: {[b.count for b in buckets]}")
        return BucketReport(
            edges=edges,
            distances=[float(d) for d in distances],
            buckets=buckets,
            tails=tails,
            count=len(samples),
        )

    # --- Вспомогательные методы ---

    def _require_body(self) -> BodyModelService:
        if self._body is None:
            raise InvalidInputError("this metric requires a body model")
        return self._body

    @staticmethod
    def _check_points(pred, gt):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
            raise InvalidInputError(f"point sets do not match: {pred.shape} vs {gt.shape}")
        return pred, gt
