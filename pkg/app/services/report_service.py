from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd
from tabulate import tabulate

from app.models.errors import IngestionError
from app.models.metrics import METRICS, ForecastReport, ReportRow, Tally

REPORT_COLUMNS = ("site", "horizon_min", "method", "mae", "rmse", "mape_or_smape", "substituted")
PREDICTION_COLUMNS = ("timestamp", "site_id", "horizon_min", "method", "predicted", "actual")

_METRIC_TITLES = {"mae": "MAE", "rmse": "RMSE", "mape_or_smape": "MAPE (%)"}


# ----------------- звіт метрик -----------------

def report_to_frame(report: ForecastReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (r.site, r.horizon_min, r.method, r.mae, r.rmse, r.mape_or_smape, r.substituted)
            for r in report.rows
        ],
        columns=list(REPORT_COLUMNS),
    )


def report_to_csv(report: ForecastReport) -> str:
    return report_to_frame(report).to_csv(index=False, float_format="%.17g")


def read_report(path: Path) -> ForecastReport:
    """
    Читає CSV звіту. Для замінених клітинок значення йде в smape, mape = None;
    для решти невідома SMAPE позначається NaN.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"site": str, "method": str})
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path}: report is empty") from None
    missing = set(REPORT_COLUMNS) - set(frame.columns)
    if missing:
        raise IngestionError(f"{path}: missing report columns {sorted(missing)}")

    rows: List[ReportRow] = []
    for rec in frame.itertuples(index=False):
        substituted = str(rec.substituted).strip().lower() == "true"
        rows.append(
            ReportRow(
                site=rec.site,
                horizon_min=int(rec.horizon_min),
                method=rec.method,
                mae=float(rec.mae),
                rmse=float(rec.rmse),
                mape=None if substituted else float(rec.mape_or_smape),
                smape=float(rec.mape_or_smape) if substituted else float("nan"),
                samples=0,
            )
        )
    return ForecastReport(rows)


def report_to_table(report: ForecastReport, floatfmt: str = ".3f") -> str:
    """
    Текстова таблиця: рядки – метрика × паркінг, стовпці – метод × горизонт.
    Замінене на SMAPE значення позначається зірочкою.
    """
    columns = [(m, h) for m in report.methods() for h in report.horizons()]
    headers = ["metric", "site"] + [f"{m}\n{h} min" for m, h in columns]
    body = []
    for metric in METRICS:
        for site in report.sites():
            line: List[object] = [_METRIC_TITLES[metric], site]
            for method, horizon in columns:
                cell = report.cell(site, horizon, method)
                value = format(getattr(cell, metric), floatfmt)
                if metric == "mape_or_smape" and cell.substituted:
                    value += "*"
                line.append(value)
            body.append(line)
    table = tabulate(body, headers=headers, tablefmt="simple", stralign="right")
    if any(r.substituted for r in report.rows):
        table += "\n* MAPE undefined (zero actual values); SMAPE shown instead"
    return table + "\n"


def tally_to_table(tallies: Sequence[Tally], label_a: str, label_b: str) -> str:
    body = [(_METRIC_TITLES[t.metric], t.wins, t.cells - t.wins, t.cells) for t in tallies]
    headers = ["metric", f"{label_a} better", f"{label_b} not worse", "cells"]
    return tabulate(body, headers=headers, tablefmt="simple") + "\n"


# ----------------- прогнози -----------------

def predictions_frame(
    timestamps: pd.DatetimeIndex,
    site_order: Sequence[str],
    horizon_min: int,
    method: str,
    predicted: np.ndarray,
    actual: np.ndarray,
) -> pd.DataFrame:
    """Довга таблиця: один рядок на (момент часу цілі, паркінг)."""
    k, n = predicted.shape
    return pd.DataFrame(
        {
            "timestamp": np.repeat(np.asarray(timestamps), n),
            "site_id": np.tile(np.asarray(site_order, dtype=object), k),
            "horizon_min": horizon_min,
            "method": method,
            "predicted": predicted.reshape(-1),
            "actual": actual.reshape(-1),
        },
        columns=list(PREDICTION_COLUMNS),
    )


def predictions_to_csv(frames: Iterable[pd.DataFrame]) -> str:
    frames = list(frames)
    if not frames:
        return ",".join(PREDICTION_COLUMNS) + "\n"
    frame = pd.concat(frames, ignore_index=True)
    return frame.to_csv(index=False, float_format="%.17g", date_format="%Y-%m-%dT%H:%M:%S")


def site_traces(frame: pd.DataFrame) -> Dict[str, str]:
    """
    Ряди «реальне проти прогнозованого» для кожного паркінгу:
    site_id -> CSV timestamp,horizon_min,method,predicted,actual.
    """
    traces: Dict[str, str] = {}
    for site, part in frame.groupby("site_id", sort=True):
        part = part.drop(columns="site_id").sort_values(["horizon_min", "method", "timestamp"], kind="stable")
        traces[site] = part.to_csv(index=False, float_format="%.17g", date_format="%Y-%m-%dT%H:%M:%S")
    return traces


def prediction_slice(
    frame: pd.DataFrame, site_id: str, start: pd.Timestamp, end: pd.Timestamp
) -> pd.DataFrame:
    """Реальні та прогнозовані значення одного паркінгу на проміжку [start, end]."""
    stamps = pd.to_datetime(frame["timestamp"])
    mask = (frame["site_id"] == site_id) & (stamps >= start) & (stamps <= end)
    part = frame.loc[mask]
    if part.empty:
        raise IngestionError(f"no predictions for site {site_id} between {start} and {end}")
    table = part.pivot_table(
        index="timestamp", columns=["method", "horizon_min"], values="predicted", aggfunc="first"
    )
    table.columns = [f"{method}_{horizon}min" for method, horizon in table.columns]
    table.insert(0, "actual", part.groupby("timestamp")["actual"].first())
    return table
