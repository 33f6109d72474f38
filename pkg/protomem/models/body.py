from enum import Enum
from typing import Any, Dict, List
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from protomem.models.types import FloatArray, IntArray
from protomem.services import rotations

NUM_JOINTS = 24
NUM_BETAS = 10
POSE_DIM = 6 * NUM_JOINTS
PARAM_DIM = POSE_DIM + NUM_BETAS

# Кинематическое дерево SMPL: родитель каждого из 24 суставов, корень = -1
SMPL_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
]  # fmt: skip

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class PartLabel(str, Enum):
    LIMB = "limb"
    HEAD = "head"
    HAND = "hand"
    FOOT = "foot"
    TORSO = "torso"


class BodyParams(BaseModel):
    """
    Параметры тела: 24 блока позы в 6D-представлении и 10 коэффициентов формы.
    В плоском виде - вектор длины 154 (сначала поза, затем форма).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pose: FloatArray = Field(..., description="Блоки позы (24, 6)")
    shape: FloatArray = Field(..., description="Коэффициенты формы (10,)")

    @field_validator("pose")
    @classmethod
    def _check_pose(cls, v: np.ndarray) -> np.ndarray:
        if v.size != POSE_DIM:
            raise ValueError(f"pose must hold {POSE_DIM} values, got {v.size}")
        v = v.reshape(NUM_JOINTS, 6)
        rotations.rot6d_to_rotmat(v)
        return v

    @field_validator("shape")
    @classmethod
    def _check_shape(cls, v: np.ndarray) -> np.ndarray:
        if v.shape != (NUM_BETAS,):
            raise ValueError(f"shape must hold {NUM_BETAS} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("shape contains non-finite values")
        return v

    @classmethod
    def identity(cls) -> "BodyParams":
        return cls(pose=np.tile(IDENTITY_6D, (NUM_JOINTS, 1)), shape=np.zeros(NUM_BETAS))

    @classmethod
    def from_flat(cls, vector) -> "BodyParams":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (PARAM_DIM,):
            raise ValueError(f"flat body parameters must have length {PARAM_DIM}, got shape {vector.shape}")
        return cls(pose=vector[:POSE_DIM], shape=vector[POSE_DIM:])

    @classmethod
    def from_flat_raw(cls, vector) -> "BodyParams":
        """
        Без проверки 6D-блоков: центры наивного K-Means хранят среднее как числа,
        ортонормализация происходит только в прямом проходе модели.
        """
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (PARAM_DIM,):
            raise ValueError(f"flat body parameters must have length {PARAM_DIM}, got shape {vector.shape}")
        pose = vector[:POSE_DIM].reshape(NUM_JOINTS, 6).copy()
        return cls.model_construct(pose=pose, shape=vector[POSE_DIM:].copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.pose.reshape(-1), self.shape])


def stack_params(samples: List[BodyParams]) -> np.ndarray:
    """Список параметров -> матрица (N, 154)."""
    if not samples:
        return np.zeros((0, PARAM_DIM))
    return np.stack([s.flatten() for s in samples])


def split_flat(flat: np.ndarray):
    """Матрица (N, 154) -> позы (N, 24, 6) и формы (N, 10)."""
    flat = np.asarray(flat, dtype=np.float64)
    return flat[..., :POSE_DIM].reshape(flat.shape[:-1] + (NUM_JOINTS, 6)), flat[..., POSE_DIM:]


class BodyModel(BaseModel):
    """
    Модель тела с линейным скиннингом.
    Инварианты проверяются в BodyModelService.validate при загрузке и генерации.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    template: FloatArray = Field(..., description="Шаблонные вершины (V, 3), метры")
    shape_dirs: FloatArray = Field(..., description="Смещения формы (V, 3, 10), метры на единицу коэффициента")
    skin_weights: FloatArray = Field(..., description="Веса скиннинга (V, 24)")
    joint_regressor: FloatArray = Field(..., description="Регрессор суставов (24, V)")
    parents: IntArray = Field(..., description="Родитель каждого сустава, корень = -1")
    part_labels: List[PartLabel] = Field(..., description="Метка части тела для каждой вершины")
    meta: Dict[str, Any] = Field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return int(self.template.shape[0])

    @property
    def num_betas(self) -> int:
        return int(self.shape_dirs.shape[-1])
