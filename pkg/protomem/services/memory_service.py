import hashlib
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import numpy as np
from loguru import logger
from pydantic import ValidationError
from protomem.core.config import settings
from protomem.core.exceptions import (
    DataIOError,
    DegenerateInputError,
    DegenerateSelectionError,
    InvalidInputError,
    MemoryBuildError,
)
from protomem.models.body import NUM_JOINTS, POSE_DIM, BodyParams, stack_params
from protomem.models.clustering import ClusterResult, PrototypeMemory
from protomem.services import rotations
from protomem.services.body_model_service import BodyModelService
from protomem.services.distance_service import DistanceService


class MemoryService:
    """
    Прототипная память: построение из результата кластеризации, хранение,
    разметка образцов ближайшим прототипом и выбор прототипа по вектору оценок (phi = c M).
    """

    def __init__(self, body_service: Optional[BodyModelService] = None):
        self._body = body_service

    @staticmethod
    def build_memory(result: ClusterResult, dataset_digest: Optional[str] = None) -> PrototypeMemory:
        """
        Строки памяти - плоские центры в порядке кластеров.
        :raises MemoryBuildError: если центр не декодируется в допустимые параметры.
        """
        rows = []
        for k, center in enumerate(result.centers):
            row = center.flatten()
            try:
                BodyParams.from_flat(row)
            except (ValidationError, ValueError) as e:
                raise MemoryBuildError(k, str(e)) from e
            rows.append(row)

        config = result.config
        meta: Dict[str, Any] = {
            "variant": config.variant.value,
            "part_weights": config.part_weight_map.model_dump(),
            "seed": config.seed,
            "dataset_digest": dataset_digest,
            "mean_distance": result.mean_distance,
        }
        memory = PrototypeMemory(K=len(rows), rows=np.stack(rows), meta=meta)
        logger.info(f"Построена память прототипов: K={memory.K}, вариант {config.variant.value}")
        return memory

    @staticmethod
    def dataset_digest(samples: List[BodyParams]) -> str:
        """SHA-256 от плоских параметров выборки - метка набора данных в метаданных памяти."""
        return hashlib.sha256(np.ascontiguousarray(stack_params(samples)).tobytes()).hexdigest()

    @staticmethod
    def save_memory(memory: PrototypeMemory, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(memory.model_dump_json(), encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Cannot write memory file {path}: {e}") from e
        logger.info(f"Память записана: {path}")

    @staticmethod
    def load_memory(path: Union[str, Path]) -> PrototypeMemory:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Cannot read memory file {path}: {e}") from e
        memory = PrototypeMemory.model_validate_json(text)
        for k, row in enumerate(memory.rows):
            try:
                BodyParams.from_flat(row)
            except (ValidationError, ValueError) as e:
                raise MemoryBuildError(k, str(e)) from e
        return memory

    def label_samples(
        self, samples: List[BodyParams], memory: PrototypeMemory, weights: np.ndarray
    ) -> List[np.ndarray]:
        """
        One-hot метка ближайшего прототипа по взвешенному расстоянию между вершинами.
        При равенстве расстояний выбирается прототип с меньшим индексом.
        """
        distances = self.prototype_distances(samples, memory, weights)
        labels = np.argmin(distances, axis=1)
        return [self.one_hot(int(j), memory.K) for j in labels]

    def prototype_distances(
        self, samples: List[BodyParams], memory: PrototypeMemory, weights: np.ndarray
    ) -> np.ndarray:
        """Матрица (N, K) взвешенных расстояний от образцов до прототипов."""
        if self._body is None:
            raise InvalidInputError("labeling requires a body model")
        if not samples:
            return np.zeros((0, memory.K))
        sample_verts, _ = self._body.forward_params(samples)
        proto_verts, _ = self._body.forward_params(memory.prototypes())
        return DistanceService.weighted_distance_matrix(sample_verts, proto_verts, weights)

    @staticmethod
    def select_prototype(memory: PrototypeMemory, scores) -> BodyParams:
        """
        phi = c M. Для one-hot c это точное извлечение строки; для мягких оценок
        блоки позы смешиваются линейно в 6D и переортогонализуются декодированием.
        :raises InvalidInputError: если c не лежит на симплексе.
        :raises DegenerateSelectionError: если смешанный блок позы вырожден.
        """
        c = MemoryService.check_scores(scores, memory.K)
        nonzero = np.flatnonzero(c)
        if nonzero.size == 1 and c[nonzero[0]] == 1.0:
            return memory.prototype(int(nonzero[0]))

        flat = c @ memory.rows
        try:
            R = rotations.rot6d_to_rotmat(flat[:POSE_DIM].reshape(NUM_JOINTS, 6))
        except DegenerateInputError as e:
            raise DegenerateSelectionError(f"blended pose block is degenerate: {e}") from e
        pose = rotations.rotmat_to_rot6d(R)
        return BodyParams(pose=pose, shape=flat[POSE_DIM:])

    @staticmethod
    def check_scores(scores, K: int) -> np.ndarray:
        c = np.asarray(scores, dtype=np.float64)
        if c.shape != (K,):
            raise InvalidInputError(f"score vector must have length {K}, got shape {c.shape}")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise InvalidInputError("scores must be finite and nonnegative")
        if abs(c.sum() - 1.0) > settings.SIMPLEX_TOL:
            raise InvalidInputError(f"scores must sum to 1, got {c.sum():.12g}")
        return c

    @staticmethod
    def one_hot(index: int, K: int) -> np.ndarray:
        c = np.zeros(K)
        c[index] = 1.0
        return c
