from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Protocol, Tuple

import numpy as np

from app.models.errors import ContractError, ShapeError
from app.models.panel import DEFAULT_INTERVAL_MIN, MinMaxScaler, WindowedDataset, horizon_class

logger = logging.getLogger(__name__)

DIRECT = "direct"
ITERATIVE = "iterative"
METHODS = (DIRECT, ITERATIVE)


class Predictor(Protocol):
    """Будь-яка навчена модель: B×m×N нормалізованих значень -> B×N."""

    window: int
    horizon: int
    scaler: Optional[MinMaxScaler]

    def predict_normalized(self, windows: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ForecastRequest:
    """
    window   – останні m нормалізованих рядків панелі (m×N);
    horizon  – кількість кроків уперед;
    method   – direct або iterative.
    """
    window: np.ndarray
    horizon: int
    method: str = DIRECT
    interval_minutes: int = DEFAULT_INTERVAL_MIN

    def __post_init__(self) -> None:
        object.__setattr__(self, "window", np.asarray(self.window, dtype=np.float64))
        if self.window.ndim != 2:
            raise ShapeError(f"forecast window must be m×N, got shape {self.window.shape}")
        if self.horizon < 1:
            raise ContractError(f"horizon must be >= 1, got {self.horizon}")
        if self.method not in METHODS:
            raise ContractError(f"unknown forecasting method '{self.method}'")


@dataclass(frozen=True)
class Forecast:
    """
    values     – прогноз у кількості місць (без обрізання);
    reported   – обрізаний до [0, місткість] і, за потреби, округлений;
    trajectory – проміжні кроки ітеративного прогнозу h×N (порожній для direct);
    time_ms    – час обчислення.
    """
    values: np.ndarray
    reported: np.ndarray
    horizon: int
    method: str
    horizon_class: str
    trajectory: np.ndarray
    time_ms: float = 0.0


# ----------------- власне прогноз -----------------

def _check_model(model: Predictor, windows: np.ndarray, horizon: Optional[int] = None) -> None:
    if windows.shape[1] != model.window:
        raise ContractError(
            f"window has {windows.shape[1]} rows, model was trained with m = {model.window}"
        )
    if horizon is not None and model.horizon != horizon:
        raise ContractError(f"model predicts h = {model.horizon} steps ahead, requested h = {horizon}")


def rollout(model: Predictor, windows: np.ndarray, steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ітеративний прогноз одношаговою моделлю для батча вікон B×m×N.
    Кожен нормалізований прогноз дописується в кінець вікна, найстаріший рядок
    відкидається. Повертає (крок steps: B×N, траєкторія: steps×B×N).
    """
    windows = np.asarray(windows, dtype=np.float64)
    _check_model(model, windows, horizon=1)
    trajectory: List[np.ndarray] = []
    current = windows
    for _ in range(steps):
        step = model.predict_normalized(current)
        trajectory.append(step)
        current = np.concatenate([current[:, 1:], step[:, None, :]], axis=1)
    return trajectory[-1], np.stack(trajectory)


def report_values(
    values: np.ndarray, capacities: Optional[np.ndarray], round_counts: bool
) -> np.ndarray:
    upper = np.inf if capacities is None else np.asarray(capacities, dtype=np.float64)
    out = np.clip(values, 0.0, upper)
    return np.rint(out) if round_counts else out


def _denormalize(model: Predictor, values: np.ndarray) -> np.ndarray:
    if model.scaler is None:
        raise ContractError("model has no fitted scaler to convert predictions back to counts")
    return model.scaler.inverse_transform(values)


def direct_predict(
    model: Predictor,
    request: ForecastRequest,
    capacities: Optional[np.ndarray] = None,
    round_counts: bool = False,
) -> Forecast:
    """Один прохід моделі, навченої саме на горизонт h."""
    windows = request.window[None]
    _check_model(model, windows, horizon=request.horizon)
    values = _denormalize(model, model.predict_normalized(windows))[0]
    return Forecast(
        values=values,
        reported=report_values(values, capacities, round_counts),
        horizon=request.horizon,
        method=DIRECT,
        horizon_class=horizon_class(request.horizon, request.interval_minutes),
        trajectory=np.empty((0, values.shape[0])),
    )


def iterative_predict(
    model: Predictor,
    request: ForecastRequest,
    capacities: Optional[np.ndarray] = None,
    round_counts: bool = False,
) -> Forecast:
    """h застосувань одношагової моделі; траєкторія повертається в кількості місць."""
    final, trajectory = rollout(model, request.window[None], request.horizon)
    values = _denormalize(model, final)[0]
    return Forecast(
        values=values,
        reported=report_values(values, capacities, round_counts),
        horizon=request.horizon,
        method=ITERATIVE,
        horizon_class=horizon_class(request.horizon, request.interval_minutes),
        trajectory=_denormalize(model, trajectory[:, 0, :]),
    )


def batch_forecast(model: Predictor, dataset: WindowedDataset, method: str = DIRECT) -> np.ndarray:
    """
    Прогноз для кожного вікна тестової вибірки (k×N, кількість місць).
    Для iterative модель має бути одношаговою, кроків – dataset.horizon.
    """
    if method == DIRECT:
        _check_model(model, dataset.inputs, horizon=dataset.horizon)
        normalized = model.predict_normalized(dataset.inputs)
    elif method == ITERATIVE:
        normalized, _ = rollout(model, dataset.inputs, dataset.horizon)
    else:
        raise ContractError(f"unknown forecasting method '{method}'")
    return _denormalize(model, normalized)


# ----------------- сервіс -----------------

class ForecastService:
    """
    Сервіс прогнозування.
    Тримає навчені моделі за горизонтом (у кроках), обирає потрібну для методу
    і вимірює час обчислення.
    """

    def __init__(
        self,
        models: Mapping[int, Predictor],
        capacities: Optional[np.ndarray] = None,
        round_counts: bool = False,
    ) -> None:
        self._models: Dict[int, Predictor] = dict(models)
        self._capacities = capacities
        self._round_counts = round_counts

    @property
    def horizons(self) -> List[int]:
        return sorted(self._models)

    def model_for(self, horizon: int, method: str) -> Predictor:
        key = horizon if method == DIRECT else 1
        try:
            return self._models[key]
        except KeyError:
            raise ContractError(f"no model trained for h = {key} ({method} forecast)") from None

    def forecast(self, request: ForecastRequest) -> Forecast:
        model = self.model_for(request.horizon, request.method)
        predict = direct_predict if request.method == DIRECT else iterative_predict

        # вимірюємо час
        t_start = time.perf_counter()
        result = predict(model, request, self._capacities, self._round_counts)
        t_end = time.perf_counter()

        elapsed = (t_end - t_start) * 1000.0
        logger.debug("%s forecast h=%d took %.3f ms", request.method, request.horizon, elapsed)
        return replace(result, time_ms=elapsed)

    def evaluate(self, dataset: WindowedDataset, method: str) -> np.ndarray:
        return batch_forecast(self.model_for(dataset.horizon, method), dataset, method)
