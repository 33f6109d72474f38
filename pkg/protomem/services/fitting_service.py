from typing import Callable, Dict, List, Optional
import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from protomem.core.config import settings
from protomem.core.exceptions import DegenerateInputError, FitDivergedError, InvalidInputError
from protomem.models.body import NUM_BETAS, POSE_DIM, PARAM_DIM, BodyParams, split_flat
from protomem.models.fitting import CameraParams, FitProblem, FitReport, LossTerms, LossWeights
from protomem.services.body_model_service import BodyModelService

# Вектор оптимизации: 144 позы, 10 формы, 3 камеры (s, t_x, t_y)
FIT_DIM = PARAM_DIM + 3


class FittingService:
    """
    Итеративное уточнение параметров phi_{t+1} = phi_t + d_phi_t градиентным спуском
    по общей функции потерь, начиная с выбранного прототипа.
    """

    def __init__(
        self,
        body_service: BodyModelService,
        fd_eps: float = settings.FIT_FD_EPS,
        max_halvings: int = settings.FIT_MAX_HALVINGS,
    ):
        self._body = body_service
        self._fd_eps = fd_eps
        self._max_halvings = max_halvings

    # --- Камера и потери ---

    @staticmethod
    def project(j3d: np.ndarray, camera: CameraParams) -> np.ndarray:
        """Слабая перспектива: (s*x + t_x, s*y + t_y), глубина отбрасывается."""
        j3d = np.asarray(j3d, dtype=np.float64)
        return camera.s * j3d[..., :2] + camera.t

    def loss_terms(self, params: BodyParams, camera: CameraParams, problem: FitProblem) -> LossTerms:
        x = self.pack(params, camera)
        terms = self._terms_batch(x[None], problem)
        return LossTerms(**{name: float(value[0]) for name, value in terms.items()})

    @staticmethod
    def total_loss(terms: LossTerms, weights: Optional[LossWeights] = None) -> float:
        """L = l1*L_J3D + l2*L_J2D + l3*L_theta + l4*L_beta + l5*L_C."""
        w = weights or LossWeights()
        return (
            w.j3d * terms.j3d
            + w.j2d * terms.j2d
            + w.pose * terms.pose
            + w.shape * terms.shape
            + w.label * terms.label
        )

    @staticmethod
    def classification_loss(target_label: np.ndarray, scores: np.ndarray) -> float:
        """Кросс-энтропия -c_hat . log(c); нулевые компоненты c_hat не вносят вклад."""
        mask = target_label > 0
        with np.errstate(divide="ignore"):
            return float(-np.sum(target_label[mask] * np.log(scores[mask])))

    # --- Градиенты ---

    def objective(self, x: np.ndarray, problem: FitProblem) -> float:
        return float(self._objective_batch(np.asarray(x, dtype=np.float64)[None], problem)[0])

    def gradient(self, x: np.ndarray, problem: FitProblem) -> np.ndarray:
        """
        Аналитический градиент для L_theta и L_beta, центральные разности (батчем) для слагаемых по суставам.
        Слагаемое L_C от параметров не зависит.
        """
        x = np.asarray(x, dtype=np.float64)
        w = problem.weights
        grad = np.zeros(FIT_DIM)
        if problem.target_params is not None:
            target = problem.target_params.flatten()
            grad[:POSE_DIM] += 2.0 * w.pose * (x[:POSE_DIM] - target[:POSE_DIM])
            grad[POSE_DIM:PARAM_DIM] += 2.0 * w.shape * (x[POSE_DIM:PARAM_DIM] - target[POSE_DIM:])

        if problem.target_j3d is not None or problem.target_j2d is not None:
            h = self._fd_eps
            step = h * np.eye(FIT_DIM)
            shifted = np.concatenate([x[None] + step, x[None] - step], axis=0)
            terms = self._terms_batch(shifted, problem)
            joint_part = w.j3d * terms["j3d"] + w.j2d * terms["j2d"]
            grad += (joint_part[:FIT_DIM] - joint_part[FIT_DIM:]) / (2.0 * h)
        return grad

    @staticmethod
    def finite_difference_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, eps: float) -> np.ndarray:
        """Эталонный градиент центральными разностями, по одной координате за раз."""
        x0 = np.asarray(x, dtype=np.float64)
        grad = np.zeros_like(x0)
        for j in range(x0.size):
            point = x0.copy()
            point[j] = x0[j] + eps
            f_plus = func(point)
            point[j] = x0[j] - eps
            f_minus = func(point)
            grad[j] = (f_plus - f_minus) / (2 * eps)
        return grad

    # --- Подгонка ---

    def fit(
        self,
        init: BodyParams,
        init_camera: Optional[CameraParams],
        problem: FitProblem,
        iters: int = settings.FIT_ITERS,
        step: float = settings.FIT_STEP,
    ) -> FitReport:
        """
        Градиентный спуск с дроблением шага: шаг, увеличивающий потери, делится пополам (до max_halvings раз).
        Возвращается итерат с наименьшими потерями. Кандидат с бесконечными потерями (s <= 0,
        вырожденный 6D-блок, переполнение) отвергается как слишком длинный шаг.

        :raises FitDivergedError: если начальные потери не конечны, потери кандидата NaN или градиент не конечен.
        """
        if iters < 1:
            raise InvalidInputError("iters must be >= 1")
        if step <= 0:
            raise InvalidInputError("step must be positive")

        camera = init_camera or CameraParams()
        x = self.pack(init, camera)
        f = self._safe_objective(x, problem)
        trace = [f]
        if not np.isfinite(f):
            raise FitDivergedError("initial loss is not finite", trace)

        best_x, best_f, accepted = x, f, 0
        for iteration in range(iters):
            try:
                grad = self.gradient(x, problem)
            except DegenerateInputError as e:
                raise FitDivergedError(f"gradient evaluation failed at iteration {iteration}: {e}", trace) from e
            if not np.all(np.isfinite(grad)):
                raise FitDivergedError(f"non-finite gradient at iteration {iteration}", trace)

            alpha = step
            for _ in range(self._max_halvings + 1):
                candidate = x - alpha * grad
                f_candidate = self._safe_objective(candidate, problem)
                if np.isnan(f_candidate):
                    logger.error(f"Итерация {iteration}: потери стали NaN")
                    raise FitDivergedError(f"loss became NaN at iteration {iteration}", trace)
                if f_candidate < f:
                    x, f = candidate, f_candidate
                    accepted += 1
                    break
                alpha *= 0.5
            else:
                logger.warning(f"Итерация {iteration}: шаг не уменьшил потери после {self._max_halvings} делений")

            trace.append(f)
            if f < best_f:
                best_x, best_f = x, f

        params, camera = self.unpack(best_x)
        terms = self.loss_terms(params, camera, problem)
        logger.debug(f"Подгонка завершена: потери {trace[0]:.6g} -> {best_f:.6g}, принято шагов {accepted}")
        return FitReport(
            params=params,
            camera=camera,
            trace=trace,
            iterations=iters,
            accepted_steps=accepted,
            terms=terms,
            loss=best_f,
        )

    def fit_many(
        self,
        inits: List[BodyParams],
        cameras: List[Optional[CameraParams]],
        problems: List[FitProblem],
        iters: int = settings.FIT_ITERS,
        step: float = settings.FIT_STEP,
        n_jobs: int = settings.THREADS,
    ) -> List[FitReport]:
        """Пакетная подгонка: задачи независимы, порядок результатов совпадает с порядком задач."""
        if not (len(inits) == len(cameras) == len(problems)):
            raise InvalidInputError("inits, cameras and problems must have equal length")
        jobs = (delayed(self.fit)(i, c, p, iters, step) for i, c, p in zip(inits, cameras, problems))
        return Parallel(n_jobs=max(1, n_jobs), prefer="threads")(jobs)

    # --- Упаковка вектора параметров ---

    @staticmethod
    def pack(params: BodyParams, camera: CameraParams) -> np.ndarray:
        return np.concatenate([params.flatten(), camera.to_vector()])

    @staticmethod
    def unpack(x: np.ndarray):
        return BodyParams.from_flat(x[:PARAM_DIM]), CameraParams.from_vector(x[PARAM_DIM:])

    # --- Внутренние вычисления ---

    def _safe_objective(self, x: np.ndarray, problem: FitProblem) -> float:
        if x[PARAM_DIM] <= 0:
            return np.inf
        try:
            return self.objective(x, problem)
        except DegenerateInputError:
            return np.inf

    def _objective_batch(self, X: np.ndarray, problem: FitProblem) -> np.ndarray:
        terms = self._terms_batch(X, problem)
        w = problem.weights
        return (
            w.j3d * terms["j3d"]
            + w.j2d * terms["j2d"]
            + w.pose * terms["pose"]
            + w.shape * terms["shape"]
            + w.label * terms["label"]
        )

    def _terms_batch(self, X: np.ndarray, problem: FitProblem) -> Dict[str, np.ndarray]:
        batch = X.shape[0]
        poses, shapes = split_flat(X[:, :PARAM_DIM])
        scale, trans = X[:, PARAM_DIM], X[:, PARAM_DIM + 1:]
        zeros = np.zeros(batch)
        terms = {"pose": zeros, "shape": zeros, "j3d": zeros, "j2d": zeros, "label": zeros}

        if problem.target_params is not None:
            target = problem.target_params
            terms["pose"] = np.sum((poses - target.pose[None]).reshape(batch, -1) ** 2, axis=1)
            terms["shape"] = np.sum((shapes - target.shape[None]) ** 2, axis=1)

        if problem.target_j3d is not None or problem.target_j2d is not None:
            _, joints = self._body.forward_batch(poses, shapes.reshape(batch, NUM_BETAS))
            if problem.target_j3d is not None:
                terms["j3d"] = np.sum((joints - problem.target_j3d[None]).reshape(batch, -1) ** 2, axis=1)
            if problem.target_j2d is not None:
                projected = scale[:, None, None] * joints[..., :2] + trans[:, None, :]
                diff = problem.visibility[None, :, None] * (projected - problem.target_j2d[None])
                terms["j2d"] = np.sum(diff.reshape(batch, -1) ** 2, axis=1)

        if problem.target_label is not None and problem.scores is not None:
            terms["label"] = np.full(batch, self.classification_loss(problem.target_label, problem.scores))
        return terms
