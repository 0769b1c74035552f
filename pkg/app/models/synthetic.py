from __future__ import annotations

from typing import List, Sequence

import numpy as np
import pandas as pd

from .graph import GeoPoint
from .panel import DEFAULT_INTERVAL_MIN, TimeSeriesPanel

# межі району паркінгів у Санта-Моніці
LAT_RANGE = (34.01289, 34.019575)
LON_RANGE = (-118.499378, -118.49372)

STEPS_PER_DAY = 24 * 60 // DEFAULT_INTERVAL_MIN


def sample_sites(count: int = 8, seed: int = 0) -> List[GeoPoint]:
    """Випадкові паркінги St1..StN у межах району."""
    rng = np.random.default_rng(seed)
    lats = rng.uniform(*LAT_RANGE, size=count)
    lons = rng.uniform(*LON_RANGE, size=count)
    return [GeoPoint(lat=float(a), lon=float(o), site_id=f"St{i + 1}") for i, (a, o) in enumerate(zip(lats, lons))]


def diffusion_panel(
    a_hat: np.ndarray,
    site_ids: Sequence[str],
    steps: int = 2000,
    seed: int = 0,
    mixing: float = 0.7,
    noise: float = 0.02,
    base: float = 100.0,
    amplitude: float = 60.0,
    start: str = "2018-05-11 07:00",
    interval_minutes: int = DEFAULT_INTERVAL_MIN,
) -> TimeSeriesPanel:
    """
    Синтетична панель, де наступне значення вузла залежить від сусідів:
    x_{t+1} = mixing · A_hat · x_t + (1 - mixing) · s_{t+1} + шум,
    s_t – добова синусоїда зі зсувом фази для кожного вузла.
    Значення переводяться в «кількість місць»: base + amplitude · x.
    """
    a = np.asarray(a_hat, dtype=np.float64)
    n = a.shape[0]
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n)

    t = np.arange(steps)[:, None]
    daily = np.sin(2.0 * np.pi * t / STEPS_PER_DAY + phases[None, :])

    x = np.empty((steps, n))
    x[0] = daily[0]
    for k in range(1, steps):
        x[k] = mixing * (a @ x[k - 1]) + (1.0 - mixing) * daily[k] + noise * rng.standard_normal(n)

    timestamps = pd.date_range(start, periods=steps, freq=pd.Timedelta(minutes=interval_minutes))
    return TimeSeriesPanel(
        timestamps=timestamps,
        values=base + amplitude * x,
        site_order=tuple(site_ids),
        interval_minutes=interval_minutes,
    )
