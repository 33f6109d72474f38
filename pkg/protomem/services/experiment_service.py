from typing import Dict, List, Optional, Sequence
import numpy as np
from loguru import logger
from protomem.core.config import settings
from protomem.core.exceptions import InvalidInputError
from protomem.models.body import BodyParams
from protomem.models.clustering import ClusterConfig, ClusterVariant, PartWeightMap, PrototypeMemory
from protomem.models.fitting import CameraParams, LossWeights
from protomem.models.records import DatasetRecord
from protomem.models.reports import PairedReport, PairedTrial, SweepRow
from protomem.services.body_model_service import BodyModelService
from protomem.services.clustering_service import ClusteringService
from protomem.services.dataset_service import DatasetService
from protomem.services.distance_service import DistanceService
from protomem.services.fitting_service import FittingService
from protomem.services.memory_service import MemoryService
from protomem.services.metrics_service import MetricsService

SWEEP_TAILS = (5.0, 10.0)


class ExperimentService:
    """
    Парные эксперименты подгонки: старт из ближайшего прототипа против старта из глобального среднего
    при одинаковом бюджете итераций, и переборы по K и весу конечностей.
    """

    def __init__(
        self,
        body_service: BodyModelService,
        clustering_service: ClusteringService,
        memory_service: MemoryService,
        fitting_service: FittingService,
        metrics_service: MetricsService,
        n_jobs: int = settings.THREADS,
    ):
        self._body = body_service
        self._clustering = clustering_service
        self._memory = memory_service
        self._fitting = fitting_service
        self._metrics = metrics_service
        self._n_jobs = max(1, int(n_jobs))

    def global_prototype(self, samples: List[BodyParams]) -> BodyParams:
        """Единственный прототип (K = 1): усреднение всей выборки тем же правилом, что и для центров."""
        if not samples:
            raise InvalidInputError("global prototype of an empty sample set is undefined")
        return self._clustering.update_centers(samples, np.zeros(len(samples), dtype=np.int64), 1)[0]

    def memory_weights(self, memory: PrototypeMemory) -> np.ndarray:
        """Веса вершин, с которыми строилась память; для прочих вариантов - равномерные."""
        stored = memory.meta.get("part_weights")
        if memory.variant == ClusterVariant.P3DH.value and stored:
            weight_map = PartWeightMap(**stored)
        elif memory.variant is None:
            weight_map = PartWeightMap()
        else:
            weight_map = PartWeightMap.uniform()
        return DistanceService.build_part_weights(self._body.model, weight_map)

    def paired_fit(
        self,
        records: Sequence[DatasetRecord],
        memory: PrototypeMemory,
        iters: int = settings.FIT_ITERS,
        step: float = settings.FIT_STEP,
        loss_weights: Optional[LossWeights] = None,
    ) -> PairedReport:
        """
        Для каждой записи две подгонки по её суставам и 2D-точкам: из выбранного прототипа и из
        глобального среднего. Победа - итоговая MPVPE из прототипа не больше MPVPE из среднего.
        """
        if not records:
            raise InvalidInputError("paired experiment needs at least one record")

        # 1. Образцы, задачи и стартовые камеры
        samples = DatasetService.to_params(records)
        problems = [DatasetService.to_problem(r, loss_weights) for r in records]
        cameras = [
            CameraParams.from_vector(r.camera) if r.camera is not None else CameraParams() for r in records
        ]

        # 2. Прототипы по оракульным меткам и глобальное среднее
        labels = self._memory.label_samples(samples, memory, self.memory_weights(memory))
        chosen = [int(np.argmax(c)) for c in labels]
        proto_inits = [self._memory.select_prototype(memory, c) for c in labels]
        singular = self.global_prototype(samples)

        # 3. Подгонки с одинаковым бюджетом
        n = len(samples)
        proto_fits = self._fitting.fit_many(proto_inits, cameras, problems, iters, step, self._n_jobs)
        global_fits = self._fitting.fit_many([singular] * n, cameras, problems, iters, step, self._n_jobs)

        # 4. Ошибки и хвосты по расстоянию до глобального прототипа
        gt_verts, _ = self._body.forward_params(samples)
        proto_verts, _ = self._body.forward_params([f.params for f in proto_fits])
        global_verts, _ = self._body.forward_params([f.params for f in global_fits])
        err_proto = np.array([self._metrics.mpvpe(proto_verts[i], gt_verts[i]) for i in range(n)])
        err_global = np.array([self._metrics.mpvpe(global_verts[i], gt_verts[i]) for i in range(n)])
        distances = self._metrics.prototype_distances(samples, singular)

        trials = [
            PairedTrial(
                index=i,
                prototype=chosen[i],
                prototype_distance=float(distances[i]),
                mpvpe_prototype=float(err_proto[i]),
                mpvpe_global=float(err_global[i]),
                win=bool(err_proto[i] <= err_global[i]),
            )
            for i in range(n)
        ]
        tail_proto: Dict[str, float] = {}
        tail_global: Dict[str, float] = {}
        for percent in sorted(set(settings.TAIL_PERCENTS) | set(SWEEP_TAILS)):
            idx = self._metrics.tail_indices(distances, percent)
            tail_proto[self.tail_key(percent)] = float(err_proto[idx].mean())
            tail_global[self.tail_key(percent)] = float(err_global[idx].mean())

        report = PairedReport(
            trials=trials,
            win_rate=float(np.mean([t.win for t in trials])),
            mean_mpvpe_prototype=float(err_proto.mean()),
            mean_mpvpe_global=float(err_global.mean()),
            tail_mpvpe_prototype=tail_proto,
            tail_mpvpe_global=tail_global,
        )
        logger.info(
            f"Парный эксперимент: {n} задач, доля побед {report.win_rate:.3f}, "
            f"MPVPE {report.mean_mpvpe_prototype:.2f} против {report.mean_mpvpe_global:.2f} мм"
        )
        return report

    def sweep_k(
        self,
        records: Sequence[DatasetRecord],
        ks: Sequence[int],
        config: ClusterConfig,
        iters: int = settings.FIT_ITERS,
        step: float = settings.FIT_STEP,
    ) -> List[SweepRow]:
        """Строка на каждое K: память строится заново, затем парный эксперимент."""
        return [
            self._sweep_row(records, "K", float(k), config.model_copy(update={"K": int(k)}), iters, step)
            for k in ks
        ]

    def sweep_limb_weight(
        self,
        records: Sequence[DatasetRecord],
        limb_weights: Sequence[float],
        config: ClusterConfig,
        iters: int = settings.FIT_ITERS,
        step: float = settings.FIT_STEP,
    ) -> List[SweepRow]:
        rows = []
        for w in limb_weights:
            weight_map = config.part_weight_map.model_copy(update={"limb": float(w)})
            swept = config.model_copy(update={"part_weight_map": weight_map})
            rows.append(self._sweep_row(records, "limb_weight", float(w), swept, iters, step))
        return rows

    @staticmethod
    def tail_key(percent: float) -> str:
        return f"{percent:g}"

    def _sweep_row(
        self,
        records: Sequence[DatasetRecord],
        parameter: str,
        value: float,
        config: ClusterConfig,
        iters: int,
        step: float,
    ) -> SweepRow:
        samples = DatasetService.to_params(records)
        result = self._clustering.cluster(samples, config)
        memory = self._memory.build_memory(result, MemoryService.dataset_digest(samples))
        report = self.paired_fit(records, memory, iters, step)
        logger.info(f"Перебор {parameter}={value:g}: MPVPE {report.mean_mpvpe_prototype:.2f} мм")
        return SweepRow(
            parameter=parameter,
            value=value,
            mpvpe=report.mean_mpvpe_prototype,
            tail_5=report.tail_mpvpe_prototype[self.tail_key(5.0)],
            tail_10=report.tail_mpvpe_prototype[self.tail_key(10.0)],
        )
