from pathlib import Path
from typing import Optional
from loguru import logger
from protomem.core.config import settings
from protomem.services.body_model_service import BodyModelService
from protomem.services.clustering_service import ClusteringService
from protomem.services.dataset_service import DatasetService
from protomem.services.experiment_service import ExperimentService
from protomem.services.fitting_service import FittingService
from protomem.services.memory_service import MemoryService
from protomem.services.metrics_service import MetricsService


def get_body_service(model_path: Optional[Path]) -> BodyModelService:
    """
    Провайдер модели тела.
    Без --model используется игрушечная модель с seed 0.
    """
    if model_path is None:
        logger.info("Файл модели не указан, используется игрушечная модель (seed 0)")
        return BodyModelService(BodyModelService.gen_toy_model(seed=0))
    return BodyModelService(BodyModelService.load_model(model_path))


def get_dataset_service(body: Optional[BodyModelService] = None) -> DatasetService:
    return DatasetService(body)


def get_clustering_service(body: BodyModelService, threads: int = settings.THREADS) -> ClusteringService:
    return ClusteringService(body, n_jobs=threads)


def get_memory_service(body: Optional[BodyModelService] = None) -> MemoryService:
    return MemoryService(body)


def get_fitting_service(body: BodyModelService) -> FittingService:
    return FittingService(body)


def get_metrics_service(body: Optional[BodyModelService] = None) -> MetricsService:
    return MetricsService(body)


def get_experiment_service(body: BodyModelService, threads: int = settings.THREADS) -> ExperimentService:
    """
    Провайдер сервиса экспериментов.
    Внедряет сервисы кластеризации, памяти, подгонки и метрик над одной моделью тела.
    """
    return ExperimentService(
        body,
        get_clustering_service(body, threads),
        get_memory_service(body),
        get_fitting_service(body),
        get_metrics_service(body),
        n_jobs=threads,
    )
