from typing import List, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from protomem.core.config import settings
from protomem.models.body import NUM_JOINTS, BodyParams
from protomem.models.types import FloatArray


class CameraParams(BaseModel):
    """Слабоперспективная камера: масштаб s и сдвиг t = (t_x, t_y)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    s: float = Field(1.0, gt=0)
    t: FloatArray = Field(default_factory=lambda: np.zeros(2))

    @field_validator("t")
    @classmethod
    def _check_t(cls, v: np.ndarray) -> np.ndarray:
        if v.shape != (2,) or not np.all(np.isfinite(v)):
            raise ValueError("camera translation must be two finite values")
        return v

    def to_vector(self) -> np.ndarray:
        return np.array([self.s, self.t[0], self.t[1]])

    @classmethod
    def from_vector(cls, vector) -> "CameraParams":
        return cls(s=float(vector[0]), t=np.asarray(vector[1:3], dtype=np.float64))


class LossWeights(BaseModel):
    """Веса слагаемых общей функции потерь."""

    j3d: float = Field(settings.LOSS_WEIGHT_J3D, ge=0)
    j2d: float = Field(settings.LOSS_WEIGHT_J2D, ge=0)
    pose: float = Field(settings.LOSS_WEIGHT_POSE, ge=0)
    shape: float = Field(settings.LOSS_WEIGHT_SHAPE, ge=0)
    label: float = Field(settings.LOSS_WEIGHT_CLS, ge=0)


class LossTerms(BaseModel):
    pose: float = 0.0
    shape: float = 0.0
    j3d: float = 0.0
    j2d: float = 0.0
    label: float = 0.0


class FitProblem(BaseModel):
    """
    Задача подгонки: целевые суставы/ключевые точки, маска видимости, целевые параметры,
    метка класса и веса потерь. Отсутствующие цели дают нулевой вклад.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    target_j3d: Optional[FloatArray] = None
    target_j2d: Optional[FloatArray] = None
    visibility: FloatArray = Field(default_factory=lambda: np.ones(NUM_JOINTS))
    target_params: Optional[BodyParams] = None
    target_label: Optional[FloatArray] = None
    scores: Optional[FloatArray] = None
    weights: LossWeights = Field(default_factory=LossWeights)

    @field_validator("target_j3d")
    @classmethod
    def _check_j3d(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is not None and (v.shape != (NUM_JOINTS, 3) or not np.all(np.isfinite(v))):
            raise ValueError(f"target_j3d must be finite with shape ({NUM_JOINTS}, 3)")
        return v

    @field_validator("target_j2d")
    @classmethod
    def _check_j2d(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is not None and (v.shape != (NUM_JOINTS, 2) or not np.all(np.isfinite(v))):
            raise ValueError(f"target_j2d must be finite with shape ({NUM_JOINTS}, 2)")
        return v

    @field_validator("visibility")
    @classmethod
    def _check_visibility(cls, v: np.ndarray) -> np.ndarray:
        if v.shape != (NUM_JOINTS,):
            raise ValueError(f"visibility must have {NUM_JOINTS} entries")
        if np.any(v < 0):
            raise ValueError("visibility must be nonnegative")
        if not np.all((v == 0) | (v == 1)):
            raise ValueError("visibility values must be 0 or 1")
        return v

    @model_validator(mode="after")
    def _check_targets(self) -> "FitProblem":
        if all(
            t is None for t in (self.target_j3d, self.target_j2d, self.target_params, self.target_label)
        ):
            raise ValueError("a fit problem needs at least one target")
        if self.target_label is not None and self.scores is not None:
            if self.target_label.shape != self.scores.shape:
                raise ValueError("target_label and scores must have the same length")
        return self


class FitReport(BaseModel):
    """
    Итог подгонки: лучшие параметры и камера, след потерь (начальное значение включено),
    число итераций и разложение потерь по слагаемым.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: BodyParams
    camera: CameraParams
    trace: List[float]
    iterations: int
    accepted_steps: int = 0
    terms: LossTerms
    loss: float

    @model_validator(mode="after")
    def _check_trace(self) -> "FitReport":
        if len(self.trace) != self.iterations + 1:
            raise ValueError("trace must hold iterations + 1 values")
        return self
