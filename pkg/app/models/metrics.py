from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError, ValidationError
from .panel import DEFAULT_INTERVAL_MIN, horizon_class

METRICS = ("mae", "rmse", "mape_or_smape")


def _pair(actual: Sequence[float], pred: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(pred, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ShapeError(f"actual has {y.size} values, prediction has {y_hat.size}")
    if y.size == 0:
        raise ShapeError("metrics need at least one sample")
    return y, y_hat


def mae(actual: Sequence[float], pred: Sequence[float]) -> float:
    y, y_hat = _pair(actual, pred)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(actual: Sequence[float], pred: Sequence[float]) -> float:
    y, y_hat = _pair(actual, pred)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mape(actual: Sequence[float], pred: Sequence[float]) -> Optional[float]:
    """
    Середня абсолютна відсоткова похибка, %.
    None, якщо серед фактичних значень є нуль (ділення на нуль) – тоді
    викликач переходить на SMAPE.
    """
    y, y_hat = _pair(actual, pred)
    if (y == 0).any():
        return None
    return float(100.0 * np.mean(np.abs(y - y_hat) / np.abs(y)))


def smape(actual: Sequence[float], pred: Sequence[float]) -> float:
    """
    Симетрична MAPE, %, у межах [0, 200].
    Елемент, де обидва значення нульові, дає 0.
    """
    y, y_hat = _pair(actual, pred)
    denom = (np.abs(y_hat) + np.abs(y)) / 2.0
    safe = np.where(denom > 0, denom, 1.0)
    terms = np.where(denom > 0, np.abs(y - y_hat) / safe, 0.0)
    return float(100.0 * np.mean(terms))


# ----------------- звіт -----------------

@dataclass(frozen=True)
class ReportRow:
    """
    Одна клітинка звіту: паркінг × горизонт × метод.
    substituted – MAPE не визначена, замість неї показано SMAPE.
    """
    site: str
    horizon_min: int
    method: str
    mae: float
    rmse: float
    mape: Optional[float]
    smape: float
    samples: int
    horizon_class: str = ""

    @property
    def substituted(self) -> bool:
        return self.mape is None

    @property
    def mape_or_smape(self) -> float:
        return self.smape if self.mape is None else self.mape

    @property
    def key(self) -> Tuple[str, int, str]:
        return self.site, self.horizon_min, self.method


class ForecastReport:
    """
    Таблиця метрик у порядку: метод, горизонт, паркінг.
    """

    def __init__(self, rows: Iterable[ReportRow]) -> None:
        self._rows: Tuple[ReportRow, ...] = tuple(rows)
        self._index: Dict[Tuple[str, int, str], ReportRow] = {r.key: r for r in self._rows}
        if len(self._index) != len(self._rows):
            raise ValidationError("report has duplicate (site, horizon, method) cells")

    @property
    def rows(self) -> Tuple[ReportRow, ...]:
        return self._rows

    def __len__(self) -> int:
        return len(self._rows)

    def cell(self, site: str, horizon_min: int, method: str) -> ReportRow:
        try:
            return self._index[(site, horizon_min, method)]
        except KeyError:
            raise ValidationError(f"report has no cell ({site}, {horizon_min} min, {method})") from None

    def sites(self) -> List[str]:
        return list(dict.fromkeys(r.site for r in self._rows))

    def horizons(self) -> List[int]:
        return list(dict.fromkeys(r.horizon_min for r in self._rows))

    def methods(self) -> List[str]:
        return list(dict.fromkeys(r.method for r in self._rows))

    def keys(self) -> List[Tuple[str, int, str]]:
        return [r.key for r in self._rows]


def build_report(
    predictions: Mapping[Tuple[int, str], np.ndarray],
    targets: Mapping[Tuple[int, str], np.ndarray],
    site_order: Sequence[str],
    horizons: Sequence[int],
    interval_minutes: int = DEFAULT_INTERVAL_MIN,
) -> ForecastReport:
    """
    predictions/targets – словники (горизонт у хвилинах, метод) -> матриця k×N
    у вихідних одиницях (кількість місць).
    """
    methods = list(dict.fromkeys(method for _, method in predictions))
    rows: List[ReportRow] = []
    for method in methods:
        for horizon_min in horizons:
            key = (horizon_min, method)
            if key not in predictions or key not in targets:
                raise ShapeError(f"no aligned predictions/targets for {horizon_min} min, {method}")
            pred = np.asarray(predictions[key], dtype=np.float64)
            actual = np.asarray(targets[key], dtype=np.float64)
            if pred.shape != actual.shape or pred.ndim != 2 or pred.shape[1] != len(site_order):
                raise ShapeError(
                    f"{horizon_min} min, {method}: predictions {pred.shape} and targets "
                    f"{actual.shape} are not aligned with {len(site_order)} sites"
                )
            h_class = horizon_class(horizon_min // interval_minutes, interval_minutes)
            for j, site in enumerate(site_order):
                y, y_hat = actual[:, j], pred[:, j]
                rows.append(
                    ReportRow(
                        site=site,
                        horizon_min=horizon_min,
                        method=method,
                        mae=mae(y, y_hat),
                        rmse=rmse(y, y_hat),
                        mape=mape(y, y_hat),
                        smape=smape(y, y_hat),
                        samples=int(y.size),
                        horizon_class=h_class,
                    )
                )
    return ForecastReport(rows)


def average_reports(reports: Sequence[ForecastReport]) -> ForecastReport:
    """
    Середнє по повторах: кожна метрика усереднюється окремо.
    Якщо MAPE не визначена хоча б в одному повторі, клітинка позначається як заміна на SMAPE.
    """
    if not reports:
        raise ValidationError("nothing to average")
    keys = reports[0].keys()
    for other in reports[1:]:
        if other.keys() != keys:
            raise ValidationError("reports to average must share the same site × horizon × method grid")

    rows: List[ReportRow] = []
    for key in keys:
        cells = [r.cell(*key) for r in reports]
        mapes = [c.mape for c in cells]
        rows.append(
            replace(
                cells[0],
                mae=float(np.mean([c.mae for c in cells])),
                rmse=float(np.mean([c.rmse for c in cells])),
                smape=float(np.mean([c.smape for c in cells])),
                mape=None if any(m is None for m in mapes) else float(np.mean(mapes)),
            )
        )
    return ForecastReport(rows)


@dataclass(frozen=True)
class Tally:
    metric: str
    wins: int
    cells: int


def compare_reports(
    report_a: ForecastReport,
    report_b: ForecastReport,
    method_a: Optional[str] = None,
    method_b: Optional[str] = None,
) -> List[Tally]:
    """
    Скільки клітинок (паркінг × горизонт) звіт A має строго меншу похибку, ніж звіт B.
    Якщо задано методи, порівнюються лише рядки цих методів.
    """
    def grid(report: ForecastReport, method: Optional[str]) -> Dict[tuple, ReportRow]:
        if method is None:
            return {r.key: r for r in report.rows}
        return {(r.site, r.horizon_min): r for r in report.rows if r.method == method}

    cells_a = grid(report_a, method_a)
    cells_b = grid(report_b, method_b)
    if set(cells_a) != set(cells_b) or not cells_a:
        raise ValidationError("reports do not share the same site × horizon grid")

    tallies: List[Tally] = []
    for metric in METRICS:
        wins = sum(
            1 for key in cells_a
            if getattr(cells_a[key], metric) < getattr(cells_b[key], metric)
        )
        tallies.append(Tally(metric=metric, wins=wins, cells=len(cells_a)))
    return tallies

