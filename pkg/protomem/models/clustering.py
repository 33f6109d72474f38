from enum import Enum
from typing import Any, Dict, List, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from protomem.core.config import settings
from protomem.models.body import PARAM_DIM, BodyParams, PartLabel
from protomem.models.types import FloatArray, IntArray


class PartWeightMap(BaseModel):
    """
    Вес каждой части тела в расстоянии между вершинами.
    По умолчанию: конечности 5.0, голова и кисти 0.3, стопы 0.5, торс 1.0.
    """

    limb: float = Field(settings.PART_WEIGHTS["limb"], ge=0)
    head: float = Field(settings.PART_WEIGHTS["head"], ge=0)
    hand: float = Field(settings.PART_WEIGHTS["hand"], ge=0)
    foot: float = Field(settings.PART_WEIGHTS["foot"], ge=0)
    torso: float = Field(settings.PART_WEIGHTS["torso"], ge=0)

    @model_validator(mode="after")
    def _check_any_positive(self) -> "PartWeightMap":
        if max(self.limb, self.head, self.hand, self.foot, self.torso) <= 0:
            raise ValueError("at least one part weight must be positive")
        return self

    @classmethod
    def uniform(cls) -> "PartWeightMap":
        return cls(limb=1.0, head=1.0, hand=1.0, foot=1.0, torso=1.0)

    def weight_for(self, label: PartLabel) -> float:
        return getattr(self, PartLabel(label).value)


class ClusterVariant(str, Enum):
    P3DH = "p3dh"
    UNIFORM_3DH = "3dh"
    RANDOM_CENTER = "random_center"
    NAIVE_PARAMS = "naive_params"


class ClusterConfig(BaseModel):
    """
    Настройки кластеризации.
    gamma_hat - порог среднего расстояния до центра, lambda_hat - бюджет итераций.
    """

    K: int = Field(settings.CLUSTER_K, ge=1)
    gamma_hat: float = Field(settings.CLUSTER_GAMMA_HAT, ge=0)
    lambda_hat: int = Field(settings.CLUSTER_LAMBDA_HAT, ge=1)
    seed: int = settings.SEED
    variant: ClusterVariant = ClusterVariant.P3DH
    part_weight_map: PartWeightMap = Field(default_factory=PartWeightMap)
    n_init: int = Field(settings.CLUSTER_N_INIT, ge=1)
    stop_when_stable: bool = False


class ClusterResult(BaseModel):
    """
    Результат кластеризации: центры, назначения, расстояния и след среднего расстояния по итерациям.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    centers: List[BodyParams]
    assignments: IntArray
    distances: FloatArray
    trace: List[float] = Field(default_factory=list)
    config: ClusterConfig

    @model_validator(mode="after")
    def _check_consistency(self) -> "ClusterResult":
        K = len(self.centers)
        if self.assignments.shape != self.distances.shape:
            raise ValueError("assignments and distances must have equal length")
        if self.assignments.size and (self.assignments.min() < 0 or self.assignments.max() >= K):
            raise ValueError(f"assignments must lie in [0, {K})")
        if np.any(self.distances < 0):
            raise ValueError("distances must be nonnegative")
        return self

    @property
    def K(self) -> int:
        return len(self.centers)

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances)) if self.distances.size else 0.0


class ClusterResultFile(BaseModel):
    """Формат файла результата: центры строками длины 154 (поза 6D, затем форма)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    centers: FloatArray
    assignments: IntArray
    distances: FloatArray
    trace: List[float]
    config: ClusterConfig

    @classmethod
    def from_result(cls, result: ClusterResult) -> "ClusterResultFile":
        return cls(
            centers=np.stack([c.flatten() for c in result.centers]),
            assignments=result.assignments,
            distances=result.distances,
            trace=result.trace,
            config=result.config,
        )

    def to_result(self) -> ClusterResult:
        if self.centers.ndim != 2 or self.centers.shape[1] != PARAM_DIM:
            raise ValueError(f"centers must have shape (K, {PARAM_DIM}), got {self.centers.shape}")
        decode = BodyParams.from_flat_raw if self.config.variant == ClusterVariant.NAIVE_PARAMS else BodyParams.from_flat
        return ClusterResult(
            centers=[decode(row) for row in self.centers],
            assignments=self.assignments,
            distances=self.distances,
            trace=self.trace,
            config=self.config,
        )


class PrototypeMemory(BaseModel):
    """
    Память прототипов M размера (K, 154) и метаданные её построения.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    K: int = Field(..., ge=1)
    dim: int = PARAM_DIM
    rows: FloatArray
    meta: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("dim")
    @classmethod
    def _check_dim(cls, v: int) -> int:
        if v != PARAM_DIM:
            raise ValueError(f"dim must be {PARAM_DIM}, got {v}")
        return v

    @model_validator(mode="after")
    def _check_rows(self) -> "PrototypeMemory":
        if self.rows.shape != (self.K, self.dim):
            raise ValueError(f"rows must have shape ({self.K}, {self.dim}), got {self.rows.shape}")
        return self

    def prototype(self, index: int) -> BodyParams:
        return BodyParams.from_flat(self.rows[index])

    def prototypes(self) -> List[BodyParams]:
        return [self.prototype(k) for k in range(self.K)]

    @property
    def variant(self) -> Optional[str]:
        return self.meta.get("variant")
