from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import IngestionError, ValidationError
from .graph import DEFAULT_EPSILON_KM, EARTH_RADIUS_KM, GeoPoint, ParkingGraph, build_adjacency
from .panel import DEFAULT_INTERVAL_MIN, TimeSeriesPanel

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parents[2] / "data"
DEFAULT_SITES_FILE = DATA_DIR / "parking_sites.csv"

# більше 6 пропущених кроків поспіль (30 хв при δ = 5 хв) – помилка
MAX_GAP_STEPS = 6

SERIES_COLUMNS = ("timestamp", "site_id", "available")


# ------------------ Завантаження координат ------------------

def load_points(path: Path) -> List[GeoPoint]:
    """
    Читає CSV з заголовком site_id,lat,lon.
    """
    path = Path(path)
    points: List[GeoPoint] = []
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = {"site_id", "lat", "lon"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                lat = float(row["lat"])
                lon = float(row["lon"])
            except (TypeError, ValueError):
                raise ValidationError(f"{path}: bad coordinates in row {row!r}") from None
            points.append(GeoPoint(lat=lat, lon=lon, site_id=row["site_id"].strip()))

    if not points:
        raise ValidationError(f"{path}: no sites found")
    return points


def load_graph(
    path: Optional[Path] = None,
    epsilon: float = DEFAULT_EPSILON_KM,
    radius: float = EARTH_RADIUS_KM,
    weight_mode: str = "distance",
) -> ParkingGraph:
    if path is None:
        path = DEFAULT_SITES_FILE
    return build_adjacency(load_points(path), epsilon=epsilon, radius=radius, weight_mode=weight_mode)


def load_capacities(path: Path) -> Dict[str, float]:
    """
    Необов'язковий файл місткості: site_id,capacity.
    """
    frame = pd.read_csv(path, dtype={"site_id": str})
    if set(frame.columns) != {"site_id", "capacity"}:
        raise ValidationError(f"{path}: expected columns site_id,capacity")
    return {row.site_id: float(row.capacity) for row in frame.itertuples(index=False)}


# ------------------ Завантаження рядів ------------------

def load_series(
    path: Path,
    expected_interval: int = DEFAULT_INTERVAL_MIN,
    site_order: Optional[Sequence[str]] = None,
    max_gap: int = MAX_GAP_STEPS,
) -> TimeSeriesPanel:
    """
    Читає довгий CSV timestamp,site_id,available і розгортає його в панель T×N.

    Пропуски заповнюються попереднім значенням того ж стовпця (початковий пропуск –
    першим спостереженим значенням). Пропуск довший за max_gap кроків – помилка.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"site_id": str})
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path}: file is empty") from None
    missing = set(SERIES_COLUMNS) - set(frame.columns)
    if missing:
        raise IngestionError(f"{path}: missing columns {sorted(missing)}")
    if frame.empty:
        raise IngestionError(f"{path}: no observations")

    try:
        frame["timestamp"] = pd.to_datetime(frame["timestamp"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise IngestionError(f"{path}: unparseable timestamp ({exc})") from None
    frame["site_id"] = frame["site_id"].str.strip()

    duplicated = frame.duplicated(subset=["timestamp", "site_id"], keep=False)
    if duplicated.any():
        keys = frame.loc[duplicated, ["timestamp", "site_id"]].drop_duplicates()
        listed = ", ".join(f"({t.isoformat()}, {s})" for t, s in keys.itertuples(index=False))
        raise IngestionError(f"{path}: duplicate (timestamp, site_id) rows: {listed}")

    sites = sorted(frame["site_id"].unique())
    if site_order is not None:
        unknown = sorted(set(sites) - set(site_order))
        if unknown:
            raise ValidationError(f"{path}: unknown site_id(s) {unknown}")
        absent = [s for s in site_order if s not in set(sites)]
        if absent:
            raise ValidationError(f"{path}: no observations for site(s) {absent}")
        sites = list(site_order)

    wide = frame.pivot(index="timestamp", columns="site_id", values="available")
    wide = wide.sort_index().reindex(columns=sites)

    grid = _regular_grid(wide.index, expected_interval, path)
    wide = wide.reindex(grid)

    _check_gaps(wide, max_gap, path)
    filled_cells = int(wide.isna().to_numpy().sum())
    if filled_cells:
        logger.warning("%s: forward-filled %d missing cell(s)", path, filled_cells)
    wide = wide.ffill().bfill()

    return TimeSeriesPanel(
        timestamps=pd.DatetimeIndex(wide.index),
        values=wide.to_numpy(dtype=np.float64),
        site_order=tuple(sites),
        interval_minutes=expected_interval,
    )


def _regular_grid(index: pd.DatetimeIndex, interval: int, path: Path) -> pd.DatetimeIndex:
    """
    Усі спостережені моменти мають лежати на сітці start + k·δ.
    """
    step = pd.Timedelta(minutes=interval)
    offsets = (index - index[0]) % step
    off_grid = index[offsets != pd.Timedelta(0)]
    if len(off_grid):
        listed = ", ".join(t.isoformat() for t in off_grid[:20])
        raise IngestionError(
            f"{path}: timestamps not on the {interval}-minute grid: {listed}"
        )
    return pd.date_range(index[0], index[-1], freq=step)


def _check_gaps(wide: pd.DataFrame, max_gap: int, path: Path) -> None:
    for site in wide.columns:
        isna = wide[site].isna().to_numpy()
        # довжина поточної серії пропусків у кожному рядку
        run = 0
        for i, gap in enumerate(isna):
            run = run + 1 if gap else 0
            if run > max_gap:
                start = i - run + 1
                stamps = wide.index[start:i + 1]
                listed = ", ".join(t.isoformat() for t in stamps)
                raise IngestionError(
                    f"{path}: site {site} is missing more than {max_gap} consecutive steps: {listed}"
                )


# ------------------ Запис у CSV ------------------

def series_to_csv(panel: TimeSeriesPanel) -> str:
    """Панель у довгому форматі timestamp,site_id,available (обернене до load_series)."""
    frame = pd.DataFrame(panel.values, index=panel.timestamps, columns=list(panel.site_order))
    frame.index.name = "timestamp"
    long = frame.reset_index().melt(id_vars="timestamp", var_name="site_id", value_name="available")
    long = long.sort_values(["timestamp", "site_id"], kind="stable")
    return long.to_csv(index=False, float_format="%.17g", date_format="%Y-%m-%dT%H:%M:%S")


def points_to_csv(points: Sequence[GeoPoint]) -> str:
    frame = pd.DataFrame(
        {"site_id": [p.site_id for p in points], "lat": [p.lat for p in points], "lon": [p.lon for p in points]}
    )
    return frame.to_csv(index=False, float_format="%.17g")
