from typing import Dict, List, Optional
from pydantic import BaseModel, Field


class MetricReport(BaseModel):
    """Ошибки реконструкции в миллиметрах."""

    mpvpe: float = Field(..., ge=0, examples=[73.6], description="Средняя ошибка положения вершин, мм")
    mpjpe: float = Field(..., ge=0, description="Средняя ошибка положения суставов, мм")
    pa_mpjpe: float = Field(..., ge=0, description="MPJPE после выравнивания Прокруста, мм")
    count: int = Field(..., ge=0, description="Число образцов")


class BucketRow(BaseModel):
    """Одна корзина гистограммы расстояний до единственного прототипа."""

    low: float
    high: float
    count: int
    indices: List[int] = Field(default_factory=list)
    metrics: Optional[MetricReport] = None


class TailSubset(BaseModel):
    percent: float
    indices: List[int]
    metrics: Optional[MetricReport] = None


class BucketReport(BaseModel):
    """
    Разбиение выборки по RMSD до единственного прототипа и хвостовые подмножества Tail-x%.
    """

    edges: List[float]
    distances: List[float]
    buckets: List[BucketRow]
    tails: List[TailSubset]
    count: int


class PairedTrial(BaseModel):
    """Одна пара подгонок: из ближайшего прототипа и из глобального среднего."""

    index: int
    prototype: int
    prototype_distance: float = Field(..., description="RMSD до единственного прототипа, м")
    mpvpe_prototype: float
    mpvpe_global: float
    win: bool


class PairedReport(BaseModel):
    trials: List[PairedTrial]
    win_rate: float
    mean_mpvpe_prototype: float
    mean_mpvpe_global: float
    tail_mpvpe_prototype: Dict[str, float] = Field(default_factory=dict)
    tail_mpvpe_global: Dict[str, float] = Field(default_factory=dict)


class SweepRow(BaseModel):
    """Строка таблицы перебора: значение параметра, общая ошибка и ошибка на хвостах."""

    parameter: str
    value: float
    mpvpe: float
    tail_5: float
    tail_10: float


class SweepReport(BaseModel):
    rows: List[SweepRow]
