from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ContractError, InsufficientDataError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_MIN = 5
DEFAULT_WINDOW = 12
DEFAULT_TRAIN_RATIO = 0.8

DIRECT = "direct"
ITERATIVE_BASE = "iterative-base"
DATASET_MODES = (DIRECT, ITERATIVE_BASE)

# частка навчання зводиться до 1e-9, щоб 0.29 · 100 давало 29, а не 28
_RATIO_SCALE = 10 ** 9


def _readonly(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MinMaxScaler:
    """
    Постовпцеве min-max масштабування.
    Для сталого стовпця (min == max) пряме перетворення дає 0, обернене – саму сталу.
    """
    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "MinMaxScaler":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0:
            raise ShapeError(f"scaler needs a non-empty T×N matrix, got shape {values.shape}")
        return cls(mins=_readonly(values.min(axis=0)), maxs=_readonly(values.max(axis=0)))

    @property
    def width(self) -> int:
        return int(self.mins.shape[0])

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1:] != (self.width,):
            raise ShapeError(
                f"scaler has {self.width} columns, values have shape {values.shape}"
            )
        return values

    def transform(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (values - self.mins) / safe, 0.0)

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        return values * (self.maxs - self.mins) + self.mins


@dataclass(frozen=True)
class TimeSeriesPanel:
    """
    Матриця T×N кількості вільних місць.
    timestamps – рівномірна сітка з кроком interval_minutes;
    values     – рядок = момент часу, стовпець = паркінг;
    site_order – порядок стовпців (збігається з порядком вершин графа);
    scaler     – заданий після нормалізації.
    """
    timestamps: pd.DatetimeIndex
    values: np.ndarray
    site_order: Tuple[str, ...]
    interval_minutes: int = DEFAULT_INTERVAL_MIN
    scaler: Optional[MinMaxScaler] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _readonly(self.values))
        object.__setattr__(self, "site_order", tuple(self.site_order))
        if self.values.ndim != 2:
            raise ShapeError(f"panel values must be T×N, got shape {self.values.shape}")
        if self.values.shape != (len(self.timestamps), len(self.site_order)):
            raise ShapeError(
                f"panel values {self.values.shape} do not match "
                f"{len(self.timestamps)} timestamps × {len(self.site_order)} sites"
            )
        if len(self.timestamps) > 1:
            steps = np.diff(self.timestamps.asi8)
            expected = pd.Timedelta(minutes=self.interval_minutes).value
            if (steps != expected).any():
                raise ValidationError("panel timestamps must be strictly increasing with constant spacing")

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def head(self, rows: int) -> "TimeSeriesPanel":
        return replace(self, timestamps=self.timestamps[:rows], values=self.values[:rows])


@dataclass(frozen=True)
class WindowedDataset:
    """
    Вибірки для навчання:
    inputs  – samples × m × N;
    targets – samples × N, targets[k] = рядок k + m - 1 + h панелі;
    target_timestamps – моменти часу цілей (для звітів).
    mode    – direct або iterative-base (одношагова база ітеративного прогнозу, h = 1).
    """
    inputs: np.ndarray
    targets: np.ndarray
    window: int
    horizon: int
    mode: str = DIRECT
    target_timestamps: Optional[pd.DatetimeIndex] = None
    site_order: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", _readonly(self.inputs))
        object.__setattr__(self, "targets", _readonly(self.targets))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"inputs {self.inputs.shape} and targets {self.targets.shape} disagree on sample count"
            )
        if self.mode not in DATASET_MODES:
            raise ContractError(f"dataset mode must be one of {', '.join(DATASET_MODES)}, got '{self.mode}'")
        if self.mode == ITERATIVE_BASE and self.horizon != 1:
            raise ContractError(f"an iterative base dataset must have h = 1, got h = {self.horizon}")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def subset(self, index: slice) -> "WindowedDataset":
        stamps = self.target_timestamps[index] if self.target_timestamps is not None else None
        return replace(
            self,
            inputs=self.inputs[index],
            targets=self.targets[index],
            target_timestamps=stamps,
        )


# ----------------- нормалізація -----------------

def minmax_normalize(
    panel: TimeSeriesPanel,
    train_ratio: float = DEFAULT_TRAIN_RATIO,
    fit_all: bool = False,
) -> TimeSeriesPanel:
    """
    Масштабує кожен стовпець у [0, 1].
    За замовчуванням min/max беруться лише з навчальної частини рядів
    (перші floor(train_ratio·T) рядків), щоб тестові дані не протікали в навчання.
    fit_all=True – min/max з усієї панелі.
    """
    if panel.scaler is not None:
        raise ContractError("panel is already normalized")
    if fit_all:
        fit_rows = panel.length
    else:
        fit_rows = max(1, int(np.floor(train_ratio * panel.length)))
    scaler = MinMaxScaler.fit(panel.values[:fit_rows])
    return replace(panel, values=scaler.transform(panel.values), scaler=scaler)


def apply_scaler(panel: TimeSeriesPanel, scaler: MinMaxScaler) -> TimeSeriesPanel:
    """Масштабує нові дані вже навченим масштабувачем (з чекпоінта)."""
    if panel.scaler is not None:
        raise ContractError("panel is already normalized")
    return replace(panel, values=scaler.transform(panel.values), scaler=scaler)


def denormalize(values: np.ndarray, scaler: Optional[MinMaxScaler]) -> np.ndarray:
    if scaler is None:
        raise ContractError("denormalize requires a fitted scaler")
    return scaler.inverse_transform(values)


# ----------------- вікна та розбиття -----------------

def sliding_windows(
    panel: TimeSeriesPanel,
    window: int = DEFAULT_WINDOW,
    horizon: int = 1,
    mode: str = DIRECT,
) -> WindowedDataset:
    """
    Ковзне вікно: вхід – рядки k..k+m-1, ціль – рядок k+m-1+h.
    Кількість вибірок T - m - h + 1.
    """
    if window < 1:
        raise ContractError(f"window length must be >= 1, got {window}")
    if horizon < 1:
        raise ContractError(f"horizon must be >= 1, got {horizon}")
    if panel.length < window + horizon:
        raise InsufficientDataError(
            f"panel has {panel.length} rows, need at least m + h = {window + horizon}"
        )

    samples = panel.length - window - horizon + 1
    logger.debug("sliding windows: m=%d h=%d -> %d samples", window, horizon, samples)
    # sliding_window_view дає samples'×N×m, переставляємо осі в samples×m×N
    views = np.lib.stride_tricks.sliding_window_view(panel.values, window, axis=0)
    inputs = np.ascontiguousarray(views[:samples].transpose(0, 2, 1))
    first_target = window - 1 + horizon
    targets = panel.values[first_target:first_target + samples]

    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        window=window,
        horizon=horizon,
        mode=mode,
        target_timestamps=panel.timestamps[first_target:first_target + samples],
        site_order=panel.site_order,
    )


def train_test_split(
    dataset: WindowedDataset, ratio: float = DEFAULT_TRAIN_RATIO
) -> Tuple[WindowedDataset, WindowedDataset]:
    """
    Хронологічне розбиття без перемішування: перші floor(ratio·S) вибірок – навчання.
    """
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"split ratio must lie in (0, 1), got {ratio!r}")
    cut = len(dataset) * round(ratio * _RATIO_SCALE) // _RATIO_SCALE
    if cut == 0 or cut == len(dataset):
        raise ContractError(
            f"split of {len(dataset)} samples at ratio {ratio} leaves one side empty"
        )
    return dataset.subset(slice(0, cut)), dataset.subset(slice(cut, None))


def horizon_steps(minutes: int, interval_minutes: int = DEFAULT_INTERVAL_MIN) -> int:
    """Горизонт у хвилинах -> кількість кроків; хвилини мають ділитися на крок δ."""
    if minutes <= 0 or minutes % interval_minutes:
        raise ContractError(
            f"horizon of {minutes} min is not a positive multiple of the {interval_minutes}-min interval"
        )
    return minutes // interval_minutes


def panel_to_csv(panel: TimeSeriesPanel) -> str:
    """Широкий CSV: timestamp,<site_1>,...,<site_N>."""
    frame = pd.DataFrame(panel.values, index=panel.timestamps, columns=list(panel.site_order))
    frame.index.name = "timestamp"
    return frame.to_csv(float_format="%.17g", date_format="%Y-%m-%dT%H:%M:%S")


SHORT_TERM_LIMIT_MIN = 30


def horizon_class(horizon: int, interval_minutes: int = DEFAULT_INTERVAL_MIN) -> str:
    """h·δ <= 30 хв – короткостроковий прогноз, більше – довгостроковий."""
    return "short-term" if horizon * interval_minutes <= SHORT_TERM_LIMIT_MIN else "long-term"
