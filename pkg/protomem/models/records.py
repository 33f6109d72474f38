from typing import List, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from protomem.models.body import NUM_BETAS, NUM_JOINTS, POSE_DIM, BodyParams
from protomem.models.types import FloatArray


class DatasetRecord(BaseModel):
    """
    Строка набора данных (JSON Lines): поза 144 значения (блоки 6D), форма 10 значений,
    опционально целевые 3D-суставы, 2D-точки, видимость и метка кластера.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    pose: FloatArray = Field(..., description="Поза: 24 блока 6D подряд")
    shape: FloatArray = Field(..., description="Коэффициенты формы")
    j3d: Optional[FloatArray] = None
    j2d: Optional[FloatArray] = None
    visibility: Optional[FloatArray] = None
    camera: Optional[FloatArray] = Field(None, description="Камера [s, t_x, t_y], которой получены j2d")
    label: Optional[int] = None

    @field_validator("pose")
    @classmethod
    def _check_pose(cls, v: np.ndarray) -> np.ndarray:
        if v.size != POSE_DIM:
            raise ValueError(f"pose must hold {POSE_DIM} values, got {v.size}")
        return v.reshape(-1)

    @field_validator("shape")
    @classmethod
    def _check_shape(cls, v: np.ndarray) -> np.ndarray:
        if v.shape != (NUM_BETAS,):
            raise ValueError(f"shape must hold {NUM_BETAS} values")
        return v

    @field_validator("j3d")
    @classmethod
    def _check_j3d(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is not None and v.shape != (NUM_JOINTS, 3):
            raise ValueError(f"j3d must have shape ({NUM_JOINTS}, 3)")
        return v

    @field_validator("j2d")
    @classmethod
    def _check_j2d(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is not None and v.shape != (NUM_JOINTS, 2):
            raise ValueError(f"j2d must have shape ({NUM_JOINTS}, 2)")
        return v

    @field_validator("visibility")
    @classmethod
    def _check_visibility(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is not None and v.shape != (NUM_JOINTS,):
            raise ValueError(f"visibility must have {NUM_JOINTS} entries")
        return v

    @field_validator("camera")
    @classmethod
    def _check_camera(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is not None and (v.shape != (3,) or v[0] <= 0):
            raise ValueError("camera must be [s, t_x, t_y] with s > 0")
        return v

    def to_params(self) -> BodyParams:
        return BodyParams(pose=self.pose, shape=self.shape)

    @classmethod
    def from_params(cls, params: BodyParams, **extra) -> "DatasetRecord":
        return cls(pose=params.pose.reshape(-1), shape=params.shape, **extra)


class ScoreRecord(BaseModel):
    """Строка файла оценок: вектор c длины K."""

    scores: List[float]


class LabelsFile(BaseModel):
    """Файл-спутник синтетического набора с истинными метками кластеров."""

    seed: int
    clusters: int
    noise: float
    labels: List[int]
