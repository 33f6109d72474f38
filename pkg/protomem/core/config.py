from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Dict, List


class Settings(BaseSettings):
    """
    Конфигурация приложения.
    Использует pydantic-settings для загрузки переменных окружения.
    """

    PROJECT_NAME: str = "Prototype Memory"
    VERSION: str = "0.1.0"

    # --- Модель тела ---
    TOY_VERTS_PER_JOINT: int = 10
    TOY_SHAPE_SCALE: float = 0.01
    TOY_RING_RADIUS: float = 0.04

    # --- Веса частей тела для кластеризации ---
    PART_WEIGHTS: Dict[str, float] = {"limb": 5.0, "head": 0.3, "hand": 0.3, "foot": 0.5, "torso": 1.0}

    # --- Синтетический набор ---
    GEN_LIMB_ANGLE: float = 1.0
    GEN_OTHER_ANGLE: float = 0.2
    GEN_SHAPE_SCALE: float = 1.0
    GEN_CAMERA_SCALE_RANGE: List[float] = [0.8, 1.2]
    GEN_CAMERA_SHIFT: float = 0.1

    # --- Кластеризация ---
    CLUSTER_K: int = 50
    CLUSTER_GAMMA_HAT: float = 0.0
    CLUSTER_LAMBDA_HAT: int = 100
    CLUSTER_N_INIT: int = 1
    SEED: int = 0

    # --- Функция потерь и подгонка ---
    LOSS_WEIGHT_J3D: float = 5.0
    LOSS_WEIGHT_J2D: float = 5.0
    LOSS_WEIGHT_POSE: float = 1.0
    LOSS_WEIGHT_SHAPE: float = 1e-3
    LOSS_WEIGHT_CLS: float = 1.0
    FIT_ITERS: int = 3
    FIT_STEP: float = 0.1
    FIT_FD_EPS: float = 1e-5
    FIT_MAX_HALVINGS: int = 20

    # --- Численные допуски ---
    ORTHO_TOL: float = 1e-8
    UNIT_QUAT_TOL: float = 1e-9
    EIGEN_GAP_TOL: float = 1e-12
    SIMPLEX_TOL: float = 1e-9
    DEGENERATE_EPS: float = 1e-12

    # --- Метрики ---
    TAIL_PERCENTS: List[float] = [5.0, 10.0, 20.0]
    MM_PER_M: float = 1000.0

    # --- Параллелизм ---
    THREADS: int = 1

    # --- Логирование ---
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")


settings = Settings()
