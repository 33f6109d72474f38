from pathlib import Path
from typing import List, Tuple, Union
import numpy as np
from loguru import logger
from pydantic import ValidationError
from protomem.core.config import settings
from protomem.core.exceptions import DataIOError, InvalidInputError, ModelLoadError
from protomem.models.body import (
    JOINT_NAMES,
    NUM_BETAS,
    NUM_JOINTS,
    SMPL_PARENTS,
    BodyModel,
    BodyParams,
    PartLabel,
    split_flat,
    stack_params,
)
from protomem.services import rotations

# Принадлежность суставов частям тела для игрушечной модели
TOY_PART_BY_JOINT = {
    **{j: PartLabel.TORSO for j in (0, 1, 2, 3, 6, 9, 13, 14)},
    **{j: PartLabel.HEAD for j in (12, 15)},
    **{j: PartLabel.HAND for j in (22, 23)},
    **{j: PartLabel.FOOT for j in (10, 11)},
    **{j: PartLabel.LIMB for j in (4, 5, 7, 8, 16, 17, 18, 19, 20, 21)},
}

# Положения суставов в покое (метры), таз в начале координат, ось y вверх
TOY_REST_JOINTS = np.array(
    [
        [0.00, 0.00, 0.00],
        [0.09, -0.08, 0.00],
        [-0.09, -0.08, 0.00],
        [0.00, 0.11, -0.02],
        [0.11, -0.46, 0.01],
        [-0.11, -0.46, 0.01],
        [0.00, 0.24, 0.00],
        [0.09, -0.86, -0.03],
        [-0.09, -0.86, -0.03],
        [0.00, 0.30, 0.02],
        [0.11, -0.91, 0.09],
        [-0.11, -0.91, 0.09],
        [0.00, 0.52, -0.01],
        [0.08, 0.42, 0.00],
        [-0.08, 0.42, 0.00],
        [0.00, 0.62, 0.04],
        [0.19, 0.45, -0.01],
        [-0.19, 0.45, -0.01],
        [0.45, 0.43, -0.03],
        [-0.45, 0.43, -0.03],
        [0.70, 0.44, -0.01],
        [-0.70, 0.44, -0.01],
        [0.78, 0.43, -0.02],
        [-0.78, 0.43, -0.02],
    ]
)


class BodyModelService:
    """
    Прямая модель тела: параметры -> вершины и 3D-суставы через линейный скиннинг (LBS).
    Корректирующие blendshapes позы не используются.
    """

    def __init__(self, model: BodyModel):
        self.validate(model)
        self._model = model
        self._order = self._topological_order(model.parents)
        self._num_vertices = model.num_vertices

    @property
    def model(self) -> BodyModel:
        return self._model

    # --- Прямой проход ---

    def forward(self, params: BodyParams) -> Tuple[np.ndarray, np.ndarray]:
        """
        Вершины (V, 3) и суставы (24, 3) для одного набора параметров.
        """
        verts, joints = self.forward_batch(params.pose[None], params.shape[None])
        return verts[0], joints[0]

    def forward_params(self, samples: List[BodyParams]) -> Tuple[np.ndarray, np.ndarray]:
        poses, shapes = split_flat(stack_params(samples))
        return self.forward_batch(poses, shapes)

    def forward_batch(self, poses: np.ndarray, shapes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Батчевый прямой проход.

        :param poses: Блоки позы (B, 24, 6).
        :param shapes: Коэффициенты формы (B, 10).
        :return: Вершины (B, V, 3) и суставы скелета в позе (B, 24, 3).
        """
        poses = np.asarray(poses, dtype=np.float64)
        shapes = np.asarray(shapes, dtype=np.float64)
        if poses.ndim != 3 or poses.shape[1:] != (NUM_JOINTS, 6):
            raise InvalidInputError(f"poses must have shape (B, {NUM_JOINTS}, 6), got {poses.shape}")
        if shapes.shape != (poses.shape[0], self._model.num_betas):
            raise InvalidInputError(f"shapes must have shape (B, {self._model.num_betas}), got {shapes.shape}")

        m = self._model
        batch = poses.shape[0]
        rots = rotations.rot6d_to_rotmat(poses)

        # 1. Форма: T' = template + shape_dirs * beta, суставы в покое регрессируются из T'
        v_shaped = m.template[None] + np.einsum("vck,bk->bvc", m.shape_dirs, shapes)
        rest_joints = np.einsum("jv,bvc->bjc", m.joint_regressor, v_shaped)

        # 2. Кинематика по дереву
        world = np.zeros((batch, NUM_JOINTS, 4, 4))
        for j in self._order:
            parent = m.parents[j]
            local = np.zeros((batch, 4, 4))
            local[:, :3, :3] = rots[:, j]
            local[:, 3, 3] = 1.0
            if parent < 0:
                local[:, :3, 3] = rest_joints[:, j]
                world[:, j] = local
            else:
                local[:, :3, 3] = rest_joints[:, j] - rest_joints[:, parent]
                world[:, j] = world[:, parent] @ local
        posed_joints = world[:, :, :3, 3].copy()

        # 3. Скиннинг: преобразования относительно положения суставов в покое
        skinning = world.copy()
        skinning[:, :, :3, 3] -= np.einsum("bjmn,bjn->bjm", world[:, :, :3, :3], rest_joints)
        blended = (m.skin_weights @ skinning.reshape(batch, NUM_JOINTS, 16)).reshape(batch, -1, 4, 4)
        verts = np.einsum("bvmn,bvn->bvm", blended[:, :, :3, :3], v_shaped) + blended[:, :, :3, 3]
        return verts, posed_joints

    def regress_joints(self, verts: np.ndarray) -> np.ndarray:
        """J = joint_regressor . V; работает и для батча (B, V, 3)."""
        verts = np.asarray(verts, dtype=np.float64)
        if verts.shape[-2:] != (self._num_vertices, 3):
            raise InvalidInputError(f"expected vertices (..., {self._num_vertices}, 3), got {verts.shape}")
        return np.einsum("jv,...vc->...jc", self._model.joint_regressor, verts)

    def rest_joints(self) -> np.ndarray:
        return self._model.joint_regressor @ self._model.template

    # --- Загрузка и сохранение ---

    @classmethod
    def load_model(cls, path: Union[str, Path]) -> BodyModel:
        """
        Загружает модель из JSON и проверяет все инварианты.
        :raises ModelLoadError: с именем поля, нарушившего формат или инвариант.
        """
        path = Path(path)
        logger.info(f"Загрузка модели тела из: {path}")
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            logger.error(f"Файл модели недоступен: {path}")
            raise DataIOError(f"Cannot read model file {path}: {e}") from e

        try:
            model = BodyModel.model_validate_json(text)
        except ValidationError as e:
            first = e.errors()[0]
            field = str(first["loc"][0]) if first.get("loc") else "<file>"
            logger.error(f"Модель не разобрана, поле {field}: {first['msg']}")
            raise ModelLoadError(field, first["msg"]) from e

        cls.validate(model)
        logger.info(f"Модель загружена: {model.num_vertices} вершин, {NUM_JOINTS} суставов.")
        return model

    @staticmethod
    def save_model(model: BodyModel, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(model.model_dump_json(), encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Cannot write model file {path}: {e}") from e
        logger.info(f"Модель записана: {path}")

    @classmethod
    def validate(cls, model: BodyModel) -> None:
        """Проверяет размерности и инварианты модели, называя нарушившее поле."""
        tol = 1e-6
        V = model.template.shape[0] if model.template.ndim == 2 else -1
        if model.template.ndim != 2 or model.template.shape[1] != 3 or V < 1:
            raise ModelLoadError("template", f"expected (V, 3), got {model.template.shape}")
        if not np.all(np.isfinite(model.template)):
            raise ModelLoadError("template", "non-finite coordinates")
        if model.shape_dirs.shape != (V, 3, NUM_BETAS):
            raise ModelLoadError("shape_dirs", f"expected ({V}, 3, {NUM_BETAS}), got {model.shape_dirs.shape}")
        if model.skin_weights.shape != (V, NUM_JOINTS):
            raise ModelLoadError("skin_weights", f"expected ({V}, {NUM_JOINTS}), got {model.skin_weights.shape}")
        if np.any(model.skin_weights < 0):
            raise ModelLoadError("skin_weights", "negative weights")
        bad_rows = np.flatnonzero(np.abs(model.skin_weights.sum(axis=1) - 1.0) > tol)
        if bad_rows.size:
            raise ModelLoadError("skin_weights", f"row {int(bad_rows[0])} does not sum to 1")
        if model.joint_regressor.shape != (NUM_JOINTS, V):
            raise ModelLoadError(
                "joint_regressor", f"expected ({NUM_JOINTS}, {V}), got {model.joint_regressor.shape}"
            )
        if np.any(model.joint_regressor < 0):
            raise ModelLoadError("joint_regressor", "negative entries")
        bad_rows = np.flatnonzero(np.abs(model.joint_regressor.sum(axis=1) - 1.0) > tol)
        if bad_rows.size:
            raise ModelLoadError("joint_regressor", f"row {int(bad_rows[0])} does not sum to 1")
        if len(model.part_labels) != V:
            raise ModelLoadError("part_labels", f"expected {V} labels, got {len(model.part_labels)}")
        if model.parents.shape != (NUM_JOINTS,):
            raise ModelLoadError("parents", f"expected {NUM_JOINTS} entries, got {model.parents.shape}")
        try:
            cls._topological_order(model.parents)
        except ValueError as e:
            raise ModelLoadError("parents", str(e)) from e

    @staticmethod
    def _topological_order(parents: np.ndarray) -> List[int]:
        """Порядок обхода от корня; заодно проверяет, что родители образуют дерево с одним корнем."""
        parents = [int(p) for p in parents]
        roots = [j for j, p in enumerate(parents) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {len(roots)}")
        if any(p < -1 or p >= len(parents) or p == j for j, p in enumerate(parents)):
            raise ValueError("parent index out of range or self-referencing")

        children = {j: [] for j in range(len(parents))}
        for j, p in enumerate(parents):
            if p >= 0:
                children[p].append(j)
        order, queue = [], [roots[0]]
        while queue:
            j = queue.pop(0)
            order.append(j)
            queue.extend(children[j])
        if len(order) != len(parents):
            raise ValueError("kinematic tree contains a cycle or unreachable joints")
        return order

    # --- Игрушечная модель ---

    @classmethod
    def gen_toy_model(cls, seed: int = 0, verts_per_joint: int = settings.TOY_VERTS_PER_JOINT) -> BodyModel:
        """
        Детерминированная модель на 24 суставах с деревом SMPL.
        Каждому суставу принадлежит кольцо из verts_per_joint вершин вокруг его положения в покое,
        веса скиннинга: 0.8 свой сустав, 0.2 родитель.
        """
        if verts_per_joint < 3:
            raise InvalidInputError("verts_per_joint must be >= 3")

        rng = np.random.default_rng(seed)
        n = verts_per_joint
        V = NUM_JOINTS * n
        template = np.zeros((V, 3))
        skin_weights = np.zeros((V, NUM_JOINTS))
        joint_regressor = np.zeros((NUM_JOINTS, V))
        part_labels = []

        angles = 2.0 * np.pi * np.arange(n) / n
        for j in range(NUM_JOINTS):
            parent = SMPL_PARENTS[j]
            center = TOY_REST_JOINTS[j]
            u, w = cls._ring_basis(center - TOY_REST_JOINTS[parent] if parent >= 0 else np.array([0.0, 1.0, 0.0]))
            rows = slice(j * n, (j + 1) * n)
            ring = settings.TOY_RING_RADIUS * (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * w)
            # Кольцо центрировано, поэтому регрессор (среднее по кольцу) возвращает положение сустава
            template[rows] = center + ring - ring.mean(axis=0)
            if parent >= 0:
                skin_weights[rows, j] = 0.8
                skin_weights[rows, parent] = 0.2
            else:
                skin_weights[rows, j] = 1.0
            joint_regressor[j, rows] = 1.0 / n
            part_labels.extend([TOY_PART_BY_JOINT[j]] * n)

        shape_dirs = settings.TOY_SHAPE_SCALE * rng.standard_normal((V, 3, NUM_BETAS))
        model = BodyModel(
            template=template,
            shape_dirs=shape_dirs,
            skin_weights=skin_weights,
            joint_regressor=joint_regressor,
            parents=np.array(SMPL_PARENTS),
            part_labels=part_labels,
            meta={"kind": "toy", "seed": seed, "verts_per_joint": n, "joint_names": JOINT_NAMES},
        )
        cls.validate(model)
        logger.debug(f"Сгенерирована игрушечная модель: seed={seed}, V={V}")
        return model

    @staticmethod
    def _ring_basis(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Ортонормированный базис плоскости, перпендикулярной направлению кости."""
        d = direction / np.linalg.norm(direction)
        helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        u = np.cross(d, helper)
        u /= np.linalg.norm(u)
        return u, np.cross(d, u)
