"""
Иерархия ошибок пакета.
Каждая ошибка знает свой код завершения CLI: 2 - ввод/вывод, 3 - валидация, 4 - численный сбой.
"""

from typing import List, Optional


class ProtoMemError(Exception):
    exit_code: int = 1


class InvalidInputError(ProtoMemError, ValueError):
    """Входные данные нарушают размерность, диапазон или конечность."""

    exit_code = 3


class DegenerateInputError(InvalidInputError):
    """Вырожденное 6D-представление: нулевой первый столбец или параллельная пара."""


class ModelLoadError(InvalidInputError):
    """Файл модели тела не прошёл разбор или проверку инвариантов."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataIOError(ProtoMemError, OSError):
    exit_code = 2


class NumericalError(ProtoMemError, ArithmeticError):
    exit_code = 4


class AmbiguousAverageError(NumericalError):
    """Максимальное собственное значение матрицы моментов не единственно."""

    def __init__(self, message: str, joint: Optional[int] = None):
        self.joint = joint
        super().__init__(message)


class CenterUpdateError(NumericalError):
    def __init__(self, cluster: int, joint: int, iteration: Optional[int] = None, reason: str = ""):
        self.cluster = cluster
        self.joint = joint
        self.iteration = iteration
        self.reason = reason
        where = f"cluster {cluster}, joint {joint}"
        if iteration is not None:
            where = f"iteration {iteration}, {where}"
        super().__init__(f"Center update failed at {where}: {reason}")

    def at_iteration(self, iteration: int) -> "CenterUpdateError":
        return CenterUpdateError(self.cluster, self.joint, iteration, self.reason)


class MemoryBuildError(NumericalError):
    def __init__(self, row: int, reason: str):
        self.row = row
        super().__init__(f"Memory row {row} is not a valid body configuration: {reason}")


class DegenerateSelectionError(NumericalError):
    """Смешанный по оценкам блок позы вырождается при декодировании."""


class AlignmentError(NumericalError):
    """Вырожденная конфигурация точек для выравнивания Прокруста."""


class FitDivergedError(NumericalError):
    def __init__(self, message: str, trace: List[float]):
        self.trace = list(trace)
        super().__init__(message)
