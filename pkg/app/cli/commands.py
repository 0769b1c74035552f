from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.models.data_loader import (
    load_capacities,
    load_graph,
    load_series,
    points_to_csv,
    series_to_csv,
)
from app.models.errors import CheckpointError, ConfigError, ContractError, ValidationError
from app.models.graph import DEFAULT_EPSILON_KM, WEIGHT_MODES, build_adjacency
from app.models.metrics import average_reports, build_report, compare_reports
from app.models.panel import (
    ITERATIVE_BASE,
    MinMaxScaler,
    WindowedDataset,
    apply_scaler,
    horizon_steps,
    minmax_normalize,
    sliding_windows,
    train_test_split,
)
from app.models.synthetic import diffusion_panel, sample_sites
from app.resources import load_default_config
from app.services.forecast_service import (
    DIRECT,
    ITERATIVE,
    METHODS,
    ForecastRequest,
    ForecastService,
    report_values,
)
from app.services.graph_service import GraphService, warn_if_edgeless
from app.services.report_service import (
    prediction_slice,
    predictions_frame,
    predictions_to_csv,
    read_report,
    report_to_csv,
    report_to_table,
    site_traces,
    tally_to_table,
)
from app.services.storage import atomic_write_text, file_fingerprint
from app.services.training_service import (
    TrainConfig,
    check_fingerprint,
    grid_search,
    history_to_csv,
    load_checkpoint,
    save_checkpoint,
    train,
)

from .config import ExperimentConfig, load_config

logger = logging.getLogger(__name__)


# ----------------- спільні допоміжні -----------------

def checkpoint_name(kind: str, horizon: int, repeat: int) -> str:
    return f"{kind}_h{horizon}_r{repeat}.npz"


def _overrides(args: argparse.Namespace) -> Dict[str, Optional[str]]:
    """Прапорці CLI у вигляді "секція.ключ" -> текст (None – не задано)."""
    mapping = {
        "series": "paths.series",
        "coords": "paths.coords",
        "output_dir": "paths.output_dir",
        "capacity": "paths.capacity",
        "epsilon": "graph.epsilon",
        "radius": "graph.radius",
        "weight_mode": "graph.weight_mode",
        "epochs": "train.epochs",
        "batch_size": "train.batch_size",
        "learning_rate": "train.learning_rate",
        "window": "train.window",
        "model_kinds": "train.model_kinds",
        "hidden_feat": "train.hidden_feat",
        "clip_norm": "train.clip_norm",
        "horizons_min": "experiment.horizons_min",
        "methods": "experiment.methods",
        "repeats": "experiment.repeats",
        "seed_base": "experiment.seed_base",
    }
    out: Dict[str, Optional[str]] = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        out[dotted] = None if value is None else str(value)
    if getattr(args, "no_strict", False):
        out["experiment.strict"] = "false"
    if getattr(args, "global_scaling", False):
        out["experiment.global_scaling"] = "true"
    if getattr(args, "round", False):
        out["experiment.round_counts"] = "true"
    return out


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config, _overrides(args))


def _capacity_vector(path: Optional[Path], site_order: Sequence[str]) -> Optional[np.ndarray]:
    if path is None:
        return None
    capacities = load_capacities(path)
    missing = [s for s in site_order if s not in capacities]
    if missing:
        raise ValidationError(f"{path}: no capacity for site(s) {missing}")
    return np.array([capacities[s] for s in site_order], dtype=np.float64)


# window і horizon задають форму вибірки, тож сітка їх не змінює
GRID_KEYS = ("hidden_feat", "learning_rate", "epochs", "batch_size")


def _parse_grid(items: Sequence[str]) -> Dict[str, List[Any]]:
    """--grid hidden_feat=16,32,64 -> {"hidden_feat": [16, 32, 64]}."""
    grid: Dict[str, List[Any]] = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep:
            raise ConfigError(f"grid entry '{item}' must look like key=v1,v2", key=item)
        if key.strip() not in GRID_KEYS:
            raise ConfigError(
                f"cannot grid-search '{key.strip()}', expected one of {', '.join(GRID_KEYS)}", key=key.strip()
            )
        field_type = type(getattr(TrainConfig(), key.strip()))
        try:
            grid[key.strip()] = [field_type(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad values in grid entry '{item}'", key=key.strip()) from None
    return grid


# ----------------- graph -----------------

def cmd_graph(args: argparse.Namespace) -> int:
    cfg = _config(args)
    graph = load_graph(cfg.coords, epsilon=cfg.epsilon, radius=cfg.radius, weight_mode=cfg.weight_mode)
    service = GraphService(graph)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "graph"
    service.export(out_dir)

    s = service.summary()
    print(f"nodes: {s.nodes}")
    print(f"edges: {s.edges}")
    print(f"min distance: {s.min_distance_km:.6f} km")
    print(f"max distance: {s.max_distance_km:.6f} km")
    return 0


# ----------------- train -----------------

@dataclass(frozen=True)
class TrainTask:
    config: TrainConfig
    dataset: WindowedDataset
    a_hat: np.ndarray
    scaler: Optional[MinMaxScaler]
    fingerprint: str
    repeat: int
    interval_minutes: int
    checkpoint_path: Path
    history_path: Path


def _run_train_task(task: TrainTask) -> Path:
    ckpt = train(
        task.config,
        task.dataset,
        task.a_hat,
        scaler=task.scaler,
        fingerprint=task.fingerprint,
        repeat=task.repeat,
        interval_minutes=task.interval_minutes,
    )
    save_checkpoint(ckpt, task.checkpoint_path)
    atomic_write_text(task.history_path, history_to_csv(ckpt.history))
    logger.info("saved %s", task.checkpoint_path)
    return task.checkpoint_path


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    graph = load_graph(cfg.coords, epsilon=cfg.epsilon, radius=cfg.radius, weight_mode=cfg.weight_mode)
    warn_if_edgeless(graph)
    raw = load_series(cfg.series, cfg.interval_minutes, site_order=graph.site_ids)
    panel = minmax_normalize(raw, cfg.train_ratio, fit_all=cfg.global_scaling)
    fingerprint = file_fingerprint(cfg.series)
    grid = _parse_grid(args.grid or [])

    tasks: List[TrainTask] = []
    for kind in cfg.model_kinds:
        for h in cfg.train_steps():
            mode = ITERATIVE_BASE if h == 1 and ITERATIVE in cfg.methods else DIRECT
            dataset = sliding_windows(panel, cfg.train.window, h, mode=mode)
            train_part, _ = train_test_split(dataset, cfg.train_ratio)
            template = replace(cfg.train_config(kind, h, 0), progress=args.progress)
            if grid:
                result = grid_search(grid, template, train_part, graph.normalized, jobs=args.jobs)
                rows = [{**row.values, "val_mse": row.val_mse} for row in result.table]
                atomic_write_text(
                    cfg.output_dir / "grid" / f"{kind}_h{h}.csv",
                    pd.DataFrame(rows).to_csv(index=False, float_format="%.17g"),
                )
                template = replace(result.best, progress=args.progress)
                logger.info("%s h=%d: best grid cell %s", kind, h, result.best)

            for r, seed in enumerate(cfg.seeds()):
                name = checkpoint_name(kind, h, r)
                path = cfg.checkpoint_dir / name
                if path.exists() and not args.force:
                    logger.warning("checkpoint %s exists, skipped (use --force to retrain)", path)
                    continue
                tasks.append(
                    TrainTask(
                        config=replace(template, seed=seed),
                        dataset=train_part,
                        a_hat=graph.normalized,
                        scaler=panel.scaler,
                        fingerprint=fingerprint,
                        repeat=r,
                        interval_minutes=cfg.interval_minutes,
                        checkpoint_path=path,
                        history_path=cfg.output_dir / "history" / name.replace(".npz", ".csv"),
                    )
                )

    logger.info("%d training run(s) to do", len(tasks))
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_run_train_task, tasks))
    else:
        for task in tasks:
            _run_train_task(task)
    return 0


# ----------------- evaluate -----------------

def _load_models(
    ckpt_dir: Path, kind: str, steps: Sequence[int], repeat: int, fingerprint: str, strict: bool
) -> Dict[int, Any]:
    models = {}
    for h in steps:
        path = ckpt_dir / checkpoint_name(kind, h, repeat)
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}")
        ckpt = load_checkpoint(path)
        check_fingerprint(ckpt, fingerprint, strict=strict)
        models[h] = ckpt
    return models


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ckpt_dir = Path(args.checkpoints) if args.checkpoints else cfg.checkpoint_dir
    fingerprint = file_fingerprint(cfg.series)
    horizons = list(zip(cfg.horizons_min, cfg.horizon_steps()))

    for kind in cfg.model_kinds:
        reports = []
        summed: Dict[Tuple[int, str], np.ndarray] = {}
        actuals: Dict[Tuple[int, str], np.ndarray] = {}
        stamps: Dict[int, pd.DatetimeIndex] = {}
        site_order: Tuple[str, ...] = ()

        for r in range(cfg.repeats):
            models = _load_models(ckpt_dir, kind, cfg.train_steps(), r, fingerprint, cfg.strict)
            first = next(iter(models.values()))
            site_order = first.site_order
            raw = load_series(cfg.series, cfg.interval_minutes, site_order=site_order)
            panel = apply_scaler(raw, first.scaler)
            service = ForecastService(models)

            predictions: Dict[Tuple[int, str], np.ndarray] = {}
            for minutes, h in horizons:
                _, test = train_test_split(sliding_windows(panel, first.window, h), cfg.train_ratio)
                stamps[minutes] = test.target_timestamps
                actual = first.scaler.inverse_transform(test.targets)
                for method in cfg.methods:
                    predictions[(minutes, method)] = service.evaluate(test, method)
                    actuals[(minutes, method)] = actual
            reports.append(build_report(predictions, actuals, site_order, cfg.horizons_min, cfg.interval_minutes))
            for key, value in predictions.items():
                summed[key] = summed.get(key, 0.0) + value

        report = average_reports(reports)
        if any(row.substituted for row in report.rows):
            logger.warning("%s: MAPE undefined for some cells (zero actual values), SMAPE reported", kind)
        atomic_write_text(cfg.output_dir / f"report_{kind}.csv", report_to_csv(report))
        atomic_write_text(cfg.output_dir / f"report_{kind}.txt", report_to_table(report))

        # метрики вище рахуються на необрізаних значеннях; обрізання й округлення – лише у файлі прогнозів
        capacities = _capacity_vector(cfg.capacity, site_order)
        frames = [
            predictions_frame(
                stamps[minutes], site_order, minutes, method,
                report_values(total / cfg.repeats, capacities, cfg.round_counts), actuals[(minutes, method)],
            )
            for (minutes, method), total in summed.items()
        ]
        atomic_write_text(cfg.output_dir / f"predictions_{kind}.csv", predictions_to_csv(frames))
        combined = pd.concat(frames, ignore_index=True)
        for site, text in site_traces(combined).items():
            atomic_write_text(cfg.output_dir / "traces" / f"{kind}_{site}.csv", text)
        if args.slice:
            site, start, end = args.slice
            table = prediction_slice(combined, site, pd.Timestamp(start), pd.Timestamp(end))
            atomic_write_text(
                cfg.output_dir / f"slice_{kind}_{site}.csv",
                table.to_csv(float_format="%.17g", date_format="%Y-%m-%dT%H:%M:%S"),
            )

        print(f"== {kind} ({cfg.repeats} repeat(s)) ==")
        print(report_to_table(report))
    return 0


# ----------------- predict -----------------

def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ckpt = load_checkpoint(Path(args.checkpoint))
    series = Path(args.series)
    check_fingerprint(ckpt, file_fingerprint(series), strict=cfg.strict)
    raw = load_series(series, ckpt.interval_minutes, site_order=ckpt.site_order)
    panel = apply_scaler(raw, ckpt.scaler)

    if args.at:
        end = panel.timestamps.get_indexer([pd.Timestamp(args.at)])[0]
        if end < 0:
            raise ContractError(f"timestamp {args.at} is not in {series}")
    else:
        end = panel.length - 1
    start = end - ckpt.window + 1
    if start < 0:
        raise ContractError(f"need {ckpt.window} rows up to {panel.timestamps[end]}, only {end + 1} available")

    if args.method == DIRECT:
        h = ckpt.horizon
        if args.horizon_min is not None and horizon_steps(args.horizon_min, ckpt.interval_minutes) != h:
            raise ContractError(
                f"checkpoint predicts {h * ckpt.interval_minutes} min ahead, requested {args.horizon_min} min"
            )
    else:
        h = horizon_steps(args.horizon_min or ckpt.interval_minutes, ckpt.interval_minutes)

    capacities = _capacity_vector(cfg.capacity, ckpt.site_order)
    service = ForecastService({ckpt.horizon: ckpt}, capacities=capacities, round_counts=cfg.round_counts)
    request = ForecastRequest(
        window=panel.values[start:end + 1], horizon=h, method=args.method, interval_minutes=ckpt.interval_minutes
    )
    result = service.forecast(request)
    logger.info("%s forecast (%s) computed in %.3f ms", result.method, result.horizon_class, result.time_ms)

    steps = range(1, h + 1) if (args.trajectory and args.method == ITERATIVE) else [h]
    frames = []
    for step in steps:
        values = result.reported if step == h else report_values(result.trajectory[step - 1], capacities, cfg.round_counts)
        when = panel.timestamps[end] + pd.Timedelta(minutes=step * ckpt.interval_minutes)
        row = panel.timestamps.get_indexer([when])[0]
        actual = raw.values[row] if row >= 0 else np.full(len(ckpt.site_order), np.nan)
        frames.append(
            predictions_frame(
                pd.DatetimeIndex([when]), ckpt.site_order, step * ckpt.interval_minutes,
                args.method, values[None, :], actual[None, :],
            )
        )
    text = predictions_to_csv(frames)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


# ----------------- compare / config / synth -----------------

def cmd_compare(args: argparse.Namespace) -> int:
    report_a = read_report(Path(args.report_a))
    report_b = read_report(Path(args.report_b))
    tallies = compare_reports(report_a, report_b, method_a=args.method_a, method_b=args.method_b)
    label_a = args.method_a or Path(args.report_a).stem
    label_b = args.method_b or Path(args.report_b).stem
    print(tally_to_table(tallies, label_a, label_b), end="")
    return 0


def cmd_config(args: argparse.Namespace) -> int:
    sys.stdout.write(load_default_config())
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    points = sample_sites(args.sites, seed=args.seed)
    graph = build_adjacency(points, epsilon=args.epsilon)
    panel = diffusion_panel(graph.normalized, graph.site_ids, steps=args.steps, seed=args.seed)
    out = Path(args.out)
    atomic_write_text(out / "parking_sites.csv", points_to_csv(graph.nodes))
    atomic_write_text(out / "parking_series.csv", series_to_csv(panel))
    logger.info("synthetic panel: %d sites × %d steps written to %s", len(points), args.steps, out)
    return 0


# ----------------- розбір аргументів -----------------

def _add_config_flags(p: argparse.ArgumentParser, training: bool = False) -> None:
    p.add_argument("-c", "--config", type=Path, help="experiment INI file (see 'config print-default')")
    p.add_argument("--series", help="CSV timestamp,site_id,available")
    p.add_argument("--coords", help="CSV site_id,lat,lon")
    p.add_argument("--output-dir", dest="output_dir", help="output directory (env PARKING_VPS_OUTPUT_DIR wins)")
    p.add_argument("--epsilon", type=float, help="edge distance threshold, km")
    p.add_argument("--radius", type=float, help="earth radius, km")
    p.add_argument("--weight-mode", dest="weight_mode", choices=WEIGHT_MODES, help="edge weights")
    p.add_argument("--model-kinds", dest="model_kinds", help="comma list of stgbgru, stacked, plain-gru")
    p.add_argument("--horizons-min", dest="horizons_min", help="comma list of horizons in minutes")
    p.add_argument("--methods", help="comma list of direct, iterative")
    p.add_argument("--repeats", type=int, help="independent runs per cell")
    p.add_argument("--seed-base", dest="seed_base", type=int, help="seed of repeat i is seed_base + i")
    p.add_argument("--window", type=int, help="input window length m (steps)")
    p.add_argument("--global-scaling", dest="global_scaling", action="store_true",
                   help="fit min/max on the whole series instead of the training part")
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--hidden-feat", dest="hidden_feat", type=int)
        p.add_argument("--clip-norm", dest="clip_norm", type=float, help="clip gradients to this global norm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parking-vps",
        description="Vacant parking space forecasting with graph-convolutional recurrent models.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--debug", action="store_true", help="check every tensor op for NaN/Inf")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph", help="build the parking graph and write A / A_hat")
    _add_config_flags(p)
    p.add_argument("--out", help="directory for adjacency CSVs and graph.dot (default <output-dir>/graph)")
    p.set_defaults(handler=cmd_graph)

    p = sub.add_parser("train", help="train one checkpoint per (model kind, horizon, repeat)")
    _add_config_flags(p, training=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--force", action="store_true", help="retrain cells whose checkpoint exists")
    p.add_argument("--progress", action="store_true", help="show an epoch progress bar")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help="grid-search a hyperparameter before training (repeatable)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="forecast the test split and write reports")
    _add_config_flags(p)
    p.add_argument("--checkpoints", help="checkpoint directory (default <output-dir>/checkpoints)")
    p.add_argument("--no-strict", dest="no_strict", action="store_true",
                   help="accept checkpoints trained on different data")
    p.add_argument("--slice", nargs=3, metavar=("SITE", "FROM", "TO"),
                   help="also write real-vs-predicted values for one site and time range")
    p.add_argument("--capacity", help="CSV site_id,capacity for clamping the predictions CSV (default paths.capacity)")
    p.add_argument("--round", action="store_true", help="round the predictions CSV (default experiment.round_counts)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("predict", help="forecast from the last window of a series file")
    p.add_argument("-c", "--config", type=Path, help="experiment INI file for capacity, rounding and strictness")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--method", choices=METHODS, default=DIRECT)
    p.add_argument("--horizon-min", dest="horizon_min", type=int,
                   help="horizon in minutes (iterative: any multiple of the interval)")
    p.add_argument("--at", help="forecast from the window ending at this timestamp")
    p.add_argument("--capacity", help="CSV site_id,capacity for clamping (default paths.capacity)")
    p.add_argument("--round", action="store_true", help="round forecasts to whole spaces (default experiment.round_counts)")
    p.add_argument("--trajectory", action="store_true", help="iterative: print every intermediate step")
    p.add_argument("--no-strict", dest="no_strict", action="store_true")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("compare", help="count cells where report A beats report B")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--method-a", dest="method_a", help="rows of report A to use")
    p.add_argument("--method-b", dest="method_b", help="rows of report B to use")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("config", help="configuration helpers")
    config_sub = p.add_subparsers(dest="config_command", required=True)
    pd_parser = config_sub.add_parser("print-default", help="print the documented default configuration")
    pd_parser.set_defaults(handler=cmd_config)

    p = sub.add_parser("synth", help="write a synthetic graph-diffusion dataset")
    p.add_argument("--out", required=True, help="directory for parking_sites.csv and parking_series.csv")
    p.add_argument("--sites", type=int, default=8)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON_KM)
    p.set_defaults(handler=cmd_synth)

    return parser
