import csv
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Type, TypeVar, Union
import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError
from protomem.core.config import settings
from protomem.core.exceptions import DataIOError, InvalidInputError
from protomem.models.body import NUM_BETAS, NUM_JOINTS, BodyParams, PartLabel
from protomem.models.fitting import FitProblem, LossWeights
from protomem.models.records import DatasetRecord, LabelsFile
from protomem.services import rotations
from protomem.services.body_model_service import BodyModelService

T = TypeVar("T", bound=BaseModel)
PathLike = Union[str, Path]


class DatasetService:
    """
    Синтетические наборы поз и чтение/запись файлов (JSON, JSON Lines, CSV).
    """

    def __init__(self, body_service: Optional[BodyModelService] = None):
        self._body = body_service

    # --- Генерация ---

    def gen_samples(
        self, seed: int, n: int, clusters: int, noise: float
    ) -> Tuple[List[DatasetRecord], np.ndarray]:
        """
        Кластеризованный набор: для каждого кластера случайная поза-генератор (суставы конечностей
        поворачиваются сильнее), члены кластера - генератор с малым шумом по вращениям и форме.
        Метка образца i равна i mod clusters.

        :return: Записи с целевыми 3D-суставами и 2D-точками и массив истинных меток.
        """
        if clusters < 1 or n < clusters:
            raise InvalidInputError(f"need n >= clusters >= 1, got n={n}, clusters={clusters}")
        if noise < 0:
            raise InvalidInputError("noise must be nonnegative")
        body = self._require_body()
        rng = np.random.default_rng(seed)

        # 1. Генераторы кластеров
        max_angle = np.where(
            self.limb_joint_mask(body), settings.GEN_LIMB_ANGLE, settings.GEN_OTHER_ANGLE
        )
        axes = rng.standard_normal((clusters, NUM_JOINTS, 3))
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        angles = rng.uniform(0.0, 1.0, (clusters, NUM_JOINTS)) * max_angle[None]
        gen_rots = rotations.axis_angle_to_rotmat(axes * angles[..., None])
        gen_shapes = settings.GEN_SHAPE_SCALE * rng.standard_normal((clusters, NUM_BETAS))

        # 2. Члены кластеров
        labels = np.arange(n) % clusters
        if noise > 0:
            rot_noise = rotations.axis_angle_to_rotmat(rng.normal(0.0, noise, (n, NUM_JOINTS, 3)))
            poses = rotations.rotmat_to_rot6d(gen_rots[labels] @ rot_noise)
            shapes = gen_shapes[labels] + rng.normal(0.0, noise, (n, NUM_BETAS))
        else:
            poses = rotations.rotmat_to_rot6d(gen_rots)[labels]
            shapes = gen_shapes[labels]

        # 3. Цели подгонки: суставы и их проекция случайной камерой
        low, high = settings.GEN_CAMERA_SCALE_RANGE
        scales = rng.uniform(low, high, n)
        shifts = rng.uniform(-settings.GEN_CAMERA_SHIFT, settings.GEN_CAMERA_SHIFT, (n, 2))
        _, joints = body.forward_batch(poses, shapes)
        keypoints = scales[:, None, None] * joints[..., :2] + shifts[:, None, :]

        records = [
            DatasetRecord(
                pose=poses[i].reshape(-1),
                shape=shapes[i],
                j3d=joints[i],
                j2d=keypoints[i],
                visibility=np.ones(NUM_JOINTS),
                camera=np.array([scales[i], shifts[i, 0], shifts[i, 1]]),
                label=int(labels[i]),
            )
            for i in range(n)
        ]
        logger.info(f"Сгенерирован набор: n={n}, clusters={clusters}, noise={noise}, seed={seed}")
        return records, labels

    @staticmethod
    def limb_joint_mask(body: BodyModelService) -> np.ndarray:
        """Суставы, большинство вершин которых (по максимальному весу скиннинга) помечены как конечность."""
        model = body.model
        owner = np.argmax(model.skin_weights, axis=1)
        is_limb = np.array([label == PartLabel.LIMB for label in model.part_labels])
        mask = np.zeros(NUM_JOINTS, dtype=bool)
        for j in range(NUM_JOINTS):
            owned = owner == j
            mask[j] = bool(owned.any()) and is_limb[owned].mean() > 0.5
        return mask

    # --- Преобразования записей ---

    @staticmethod
    def to_params(records: Sequence[DatasetRecord]) -> List[BodyParams]:
        params = []
        for line, record in enumerate(records, start=1):
            try:
                params.append(record.to_params())
            except (ValidationError, ValueError) as e:
                raise InvalidInputError(f"record {line}: invalid body parameters: {e}") from e
        return params

    @staticmethod
    def to_problem(record: DatasetRecord, weights: Optional[LossWeights] = None) -> FitProblem:
        """Задача подгонки только по суставам и ключевым точкам записи."""
        if record.j3d is None and record.j2d is None:
            raise InvalidInputError("record has neither j3d nor j2d targets")
        return FitProblem(
            target_j3d=record.j3d,
            target_j2d=record.j2d,
            visibility=record.visibility if record.visibility is not None else np.ones(NUM_JOINTS),
            weights=weights or LossWeights(),
        )

    # --- Файлы ---

    @staticmethod
    def labels_path(data_path: PathLike) -> Path:
        """Файл-спутник с истинными метками: data.jsonl -> data.labels.json."""
        path = Path(data_path)
        return path.with_name(f"{path.stem}.labels.json")

    @staticmethod
    def read_jsonl(path: PathLike, model_cls: Type[T]) -> List[T]:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Cannot read {path}: {e}") from e

        items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                items.append(model_cls.model_validate_json(line))
            except ValidationError as e:
                logger.error(f"Некорректная строка {path}:{lineno}")
                raise InvalidInputError(f"{path}:{lineno}: {e.errors()[0]['msg']}") from e
        logger.debug(f"Прочитано {len(items)} записей из {path}")
        return items

    @staticmethod
    def write_jsonl(items: Sequence[BaseModel], path: PathLike) -> None:
        path = Path(path)
        text = "".join(item.model_dump_json(exclude_none=True) + "\n" for item in items)
        DatasetService._write_text(path, text)
        logger.info(f"Записано {len(items)} строк: {path}")

    @staticmethod
    def read_json(path: PathLike, model_cls: Type[T]) -> T:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Cannot read {path}: {e}") from e
        try:
            return model_cls.model_validate_json(text)
        except ValidationError as e:
            raise InvalidInputError(f"{path}: {e.errors()[0]['msg']}") from e

    @staticmethod
    def write_json(item: BaseModel, path: PathLike) -> None:
        path = Path(path)
        DatasetService._write_text(path, item.model_dump_json(indent=2))
        logger.info(f"Записан файл: {path}")

    @staticmethod
    def write_labels(labels: np.ndarray, path: PathLike, seed: int, clusters: int, noise: float) -> None:
        sidecar = LabelsFile(seed=seed, clusters=clusters, noise=noise, labels=[int(x) for x in labels])
        DatasetService.write_json(sidecar, path)

    @staticmethod
    def write_csv(rows: Sequence[dict], path: PathLike) -> None:
        """Таблица для внешних графиков; колонки берутся из первой строки."""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8", newline="") as f:
                if rows:
                    writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
                    writer.writeheader()
                    writer.writerows(rows)
        except OSError as e:
            raise DataIOError(f"Cannot write {path}: {e}") from e
        logger.info(f"Записана таблица: {path}")

    @staticmethod
    def _write_text(path: Path, text: str) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            logger.error(f"Не удалось записать {path}")
            raise DataIOError(f"Cannot write {path}: {e}") from e

    def _require_body(self) -> BodyModelService:
        if self._body is None:
            raise InvalidInputError("sample generation requires a body model")
        return self._body
