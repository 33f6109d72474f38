"""
Преобразования между представлениями вращений: ось-угол, единичный кватернион (w, x, y, z),
матрица поворота и непрерывное 6D-представление (первые два столбца матрицы).
Функции принимают батчи: последние оси описывают само вращение, ведущие оси произвольные.
"""

from typing import Optional
import numpy as np
from protomem.core.config import settings
from protomem.core.exceptions import AmbiguousAverageError, DegenerateInputError, InvalidInputError


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{what} contains non-finite values")


def _require_last_dims(x: np.ndarray, dims: tuple, what: str) -> None:
    if x.shape[x.ndim - len(dims):] != dims:
        raise InvalidInputError(f"{what} must have trailing shape {dims}, got {x.shape}")


def _skew(v: np.ndarray) -> np.ndarray:
    zero = np.zeros(v.shape[:-1])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def check_rotation(R: np.ndarray, tol: Optional[float] = None) -> None:
    """
    Проверяет, что матрицы ортонормированы и имеют определитель +1.
    :raises InvalidInputError: при нарушении хотя бы для одной матрицы батча.
    """
    tol = settings.ORTHO_TOL if tol is None else tol
    R = np.asarray(R, dtype=np.float64)
    _require_last_dims(R, (3, 3), "rotation matrix")
    _require_finite(R, "rotation matrix")
    gram = np.swapaxes(R, -1, -2) @ R
    if np.max(np.abs(gram - np.eye(3)), initial=0.0) > tol:
        raise InvalidInputError("rotation matrix is not orthonormal")
    if np.max(np.abs(np.linalg.det(R) - 1.0), initial=0.0) > tol:
        raise InvalidInputError("rotation matrix determinant is not +1")


def axis_angle_to_rotmat(v) -> np.ndarray:
    """Формула Родрига. Угол равен норме вектора, углы больше 2π допустимы."""
    v = np.asarray(v, dtype=np.float64)
    _require_last_dims(v, (3,), "axis-angle")
    _require_finite(v, "axis-angle")

    angle = np.linalg.norm(v, axis=-1)[..., None, None]
    small = angle < settings.DEGENERATE_EPS
    safe_angle = np.where(small, 1.0, angle)
    K = _skew(v) / safe_angle
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
    # Для почти нулевого угла - первый порядок: I + [v]x
    return np.where(small, eye + _skew(v), R)


def rotmat_to_axis_angle(R) -> np.ndarray:
    """Обратное преобразование через кватернион; угол в [0, π]."""
    q = rotmat_to_quat(R)
    xyz = q[..., 1:]
    sin_half = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(sin_half, q[..., :1])
    small = sin_half < settings.DEGENERATE_EPS
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, sin_half))
    return xyz * scale


def rot6d_to_rotmat(r) -> np.ndarray:
    """
    Декодирует 6D-представление ортогонализацией Грама-Шмидта:
    e1 = a1/|a1|, e2 = нормированная часть a2, ортогональная e1, e3 = e1 x e2.
    :raises DegenerateInputError: нулевой a1 или a2, параллельный a1.
    """
    r = np.asarray(r, dtype=np.float64)
    _require_last_dims(r, (6,), "6D rotation")
    _require_finite(r, "6D rotation")

    a1, a2 = r[..., :3], r[..., 3:]
    eps = settings.DEGENERATE_EPS
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < eps):
        raise DegenerateInputError("6D rotation has a zero first column")
    e1 = a1 / n1
    u2 = a2 - np.sum(e1 * a2, axis=-1, keepdims=True) * e1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= eps * np.maximum(1.0, np.linalg.norm(a2, axis=-1, keepdims=True))):
        raise DegenerateInputError("6D rotation columns are parallel")
    e2 = u2 / n2
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=-1)


def rotmat_to_rot6d(R, check: bool = True) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if check:
        check_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def canonicalize_quat(q) -> np.ndarray:
    """
    Фиксирует знак кватерниона: w >= 0, при w = 0 положителен первый ненулевой компонент.
    """
    q = np.array(q, dtype=np.float64)
    nonzero = np.abs(q) > settings.DEGENERATE_EPS
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return np.where(lead < 0, -q, q)


def rotmat_to_quat(R) -> np.ndarray:
    """Метод Шеппарда: ветка выбирается по наибольшему из следа и диагональных элементов."""
    R = np.asarray(R, dtype=np.float64)
    check_rotation(R)

    m00, m01, m02 = R[..., 0, 0], R[..., 0, 1], R[..., 0, 2]
    m10, m11, m12 = R[..., 1, 0], R[..., 1, 1], R[..., 1, 2]
    m20, m21, m22 = R[..., 2, 0], R[..., 2, 1], R[..., 2, 2]
    trace = m00 + m11 + m22

    tiny = np.finfo(np.float64).tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        w0 = np.sqrt(np.maximum(1.0 + trace, 0.0)) / 2.0
        x1 = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) / 2.0
        y2 = np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 0.0)) / 2.0
        z3 = np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 0.0)) / 2.0
        d0, d1, d2, d3 = (4.0 * np.maximum(c, tiny) for c in (w0, x1, y2, z3))
        candidates = np.stack(
            [
                np.stack([w0, (m21 - m12) / d0, (m02 - m20) / d0, (m10 - m01) / d0], axis=-1),
                np.stack([(m21 - m12) / d1, x1, (m01 + m10) / d1, (m02 + m20) / d1], axis=-1),
                np.stack([(m02 - m20) / d2, (m01 + m10) / d2, y2, (m12 + m21) / d2], axis=-1),
                np.stack([(m10 - m01) / d3, (m02 + m20) / d3, (m12 + m21) / d3, z3], axis=-1),
            ],
            axis=-2,
        )
    branch = np.argmax(np.stack([trace, m00, m11, m22], axis=-1), axis=-1)
    q = np.take_along_axis(candidates, branch[..., None, None], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return canonicalize_quat(q)


def quat_to_rotmat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    _require_last_dims(q, (4,), "quaternion")
    _require_finite(q, "quaternion")
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < settings.DEGENERATE_EPS):
        raise InvalidInputError("zero quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)

    return np.stack(
        [
            np.stack([1 - 2 * (y**2 + z**2), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x**2 + z**2), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x**2 + y**2)], axis=-1),
        ],
        axis=-2,
    )


def quat_multiply(q1, q2) -> np.ndarray:
    """Произведение Гамильтона q1 * q2."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=np.float64), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=np.float64), -1, 0)

    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def average_quaternions(qs, weights=None) -> np.ndarray:
    """
    Усреднение вращений по Маркли: собственный вектор матрицы моментов M = sum w_i q_i q_i^T,
    отвечающий наибольшему собственному значению, т.е. argmax q^T M q на единичной сфере.

    :param qs: Кватернионы формы (n, 4) или батч (n, J, 4) - тогда усреднение идёт по каждому J отдельно.
    :param weights: Неотрицательные веса формы (n,), по умолчанию единичные.
    :return: Канонизированный по знаку кватернион (4,) или (J, 4).
    :raises AmbiguousAverageError: если наибольшее собственное значение не отделено от второго.
    """
    qs = np.asarray(qs, dtype=np.float64)
    if qs.ndim not in (2, 3) or qs.shape[0] == 0:
        raise InvalidInputError(f"expected a nonempty list of quaternions, got shape {qs.shape}")
    _require_last_dims(qs, (4,), "quaternion")
    _require_finite(qs, "quaternion")
    if np.max(np.abs(np.linalg.norm(qs, axis=-1) - 1.0)) > settings.UNIT_QUAT_TOL:
        raise InvalidInputError("quaternions must have unit norm")

    n = qs.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidInputError("weights must be n nonnegative finite values with a positive sum")
    w = w / w.sum()

    batched = qs.ndim == 3
    stacked = qs if batched else qs[:, None, :]
    # (J, 4, 4), след каждой матрицы равен 1
    M = np.einsum("n,nji,njk->jik", w, stacked, stacked)
    vals, vecs = np.linalg.eigh(M)
    gaps = vals[:, -1] - vals[:, -2]
    ambiguous = np.flatnonzero(gaps <= settings.EIGEN_GAP_TOL)
    if ambiguous.size:
        joint = int(ambiguous[0]) if batched else None
        raise AmbiguousAverageError("top eigenvalue of the quaternion moment matrix is not unique", joint=joint)

    q = vecs[:, :, -1]
    q = canonicalize_quat(q / np.linalg.norm(q, axis=-1, keepdims=True))
    return q if batched else q[0]
