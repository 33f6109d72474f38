"""
Аннотированные типы для хранения numpy-массивов в pydantic-моделях.
В JSON массивы сериализуются вложенными списками, при загрузке превращаются обратно в ndarray.
"""

from typing import Annotated
import numpy as np
from pydantic import BeforeValidator, PlainSerializer


def _as_float_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def _as_int_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("expected integer values")
    return arr.astype(np.int64)


def _to_list(arr: np.ndarray) -> list:
    return arr.tolist()


FloatArray = Annotated[np.ndarray, BeforeValidator(_as_float_array), PlainSerializer(_to_list, return_type=list)]
IntArray = Annotated[np.ndarray, BeforeValidator(_as_int_array), PlainSerializer(_to_list, return_type=list)]
