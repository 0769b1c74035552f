from __future__ import annotations

import io
import itertools
import json
import logging
import math
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.models.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
)
from app.models.networks import MODEL_KINDS, STGBGRU, ModelParams, ModelShape, forward_sequence, init_params
from app.models.optim import Adam, clip_by_global_norm
from app.models.panel import MinMaxScaler, WindowedDataset, train_test_split
from app.models.tensor import ArrayLike, ComputationTape, Tensor, backward, mse_reduce

from .storage import PathLike, atomic_write_bytes

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "parking-vps-checkpoint"
CHECKPOINT_VERSION = 1
DIVERGENCE_LIMIT = 1e6
EVAL_CHUNK = 256

# фіксована дата записів zip, щоб однакові чекпоінти були однакові до байта
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class TrainConfig:
    """
    Гіперпараметри одного запуску навчання.
    epochs = 0 дозволено: чекпоінт з початковими параметрами.
    """
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 0.001
    window: int = 12
    seed: int = 0
    model_kind: str = STGBGRU
    hidden_feat: int = 64
    horizon: int = 1
    gcn_feat: int = 64
    gcn_depth: int = 1
    candidate_bias: bool = False
    clip_norm: Optional[float] = None
    log_every: int = 50
    progress: bool = False

    def validate(self) -> None:
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "window", "hidden_feat", "horizon", "gcn_feat"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.model_kind not in MODEL_KINDS:
            raise ContractError(f"unknown model kind '{self.model_kind}'")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ContractError(f"clip_norm must be positive, got {self.clip_norm}")

    def model_shape(self) -> ModelShape:
        return ModelShape(
            kind=self.model_kind,
            hidden_feat=self.hidden_feat,
            gcn_feat=self.gcn_feat,
            gcn_depth=self.gcn_depth,
            candidate_bias=self.candidate_bias,
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: Optional[float] = None


@dataclass
class Checkpoint:
    """
    Навчена модель разом з усім, що потрібно для відтворення прогнозу:
    конфігурація, параметри, масштабування, A_hat, історія втрат і відбиток даних.
    """
    config: TrainConfig
    params: ModelParams
    a_hat: np.ndarray
    scaler: Optional[MinMaxScaler] = None
    history: List[EpochRecord] = field(default_factory=list)
    fingerprint: str = ""
    site_order: Tuple[str, ...] = ()
    interval_minutes: int = 5
    repeat: int = 0

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def kind(self) -> str:
        return self.config.model_kind

    def predict_normalized(self, windows: np.ndarray) -> np.ndarray:
        """B×m×N -> B×N у нормалізованих одиницях (без запису на стрічку)."""
        return forward_sequence(self.params, windows, self.a_hat).data


# ----------------- втрата і навчання -----------------

def mse_loss(pred: ArrayLike, target: ArrayLike) -> Tensor:
    """Середній квадрат похибки по всіх batch×N елементах."""
    return mse_reduce(pred, target)


def evaluate_mse(params: ModelParams, dataset: WindowedDataset, a_hat: np.ndarray) -> float:
    total = 0.0
    for start in range(0, len(dataset), EVAL_CHUNK):
        inputs = dataset.inputs[start:start + EVAL_CHUNK]
        targets = dataset.targets[start:start + EVAL_CHUNK]
        pred = forward_sequence(params, inputs, a_hat).data
        total += float(np.sum((pred - targets) ** 2))
    return total / dataset.targets.size


def train(
    config: TrainConfig,
    dataset: WindowedDataset,
    a_hat: np.ndarray,
    validation: Optional[WindowedDataset] = None,
    scaler: Optional[MinMaxScaler] = None,
    fingerprint: str = "",
    repeat: int = 0,
    interval_minutes: int = 5,
) -> Checkpoint:
    """
    epochs × ceil(samples / batch_size) кроків Adam. Порядок батчів перемішується
    раз на епоху генератором, похідним від seed, тому запуск детермінований.
    """
    config.validate()
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    if dataset.window != config.window or dataset.horizon != config.horizon:
        raise ContractError(
            f"dataset (m={dataset.window}, h={dataset.horizon}) does not match "
            f"config (m={config.window}, h={config.horizon})"
        )
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_hat.shape != (dataset.targets.shape[1],) * 2:
        raise ShapeError(f"A_hat {a_hat.shape} does not match {dataset.targets.shape[1]} sites")

    logger.debug("%s h=%d: %d %s windows", config.model_kind, config.horizon, len(dataset), dataset.mode)
    params = init_params(config.model_shape(), config.seed)
    named = params.named_tensors()
    optimizer = Adam(named, lr=config.learning_rate)
    # окремий потік випадковості для порядку батчів
    order_rng = np.random.default_rng([config.seed, 1])

    history: List[EpochRecord] = []
    samples = len(dataset)
    epochs = tqdm(
        range(config.epochs),
        desc=f"{config.model_kind} h={config.horizon}",
        disable=not config.progress,
    )
    for epoch in epochs:
        order = order_rng.permutation(samples)
        total = 0.0
        for start in range(0, samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            with ComputationTape() as tape:
                pred = forward_sequence(params, dataset.inputs[idx], a_hat)
                loss = mse_loss(pred, dataset.targets[idx])
            value = float(loss.data)
            if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
                raise TrainingDivergedError(epoch, value)

            grads = backward(tape, loss).for_named(named)
            if config.clip_norm is not None:
                grads = clip_by_global_norm(grads, config.clip_norm)
            try:
                optimizer.step(grads)
            except NumericError:
                raise TrainingDivergedError(epoch, value) from None
            total += value * len(idx)

        record = EpochRecord(
            epoch=epoch,
            train_mse=total / samples,
            val_mse=evaluate_mse(params, validation, a_hat) if validation is not None else None,
        )
        history.append(record)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            logger.info(
                "%s h=%d seed=%d epoch %d/%d train_mse=%.6g%s",
                config.model_kind, config.horizon, config.seed, epoch + 1, config.epochs,
                record.train_mse,
                "" if record.val_mse is None else f" val_mse={record.val_mse:.6g}",
            )

    return Checkpoint(
        config=config,
        params=params,
        a_hat=a_hat,
        scaler=scaler,
        history=history,
        fingerprint=fingerprint,
        site_order=tuple(dataset.site_order),
        interval_minutes=interval_minutes,
        repeat=repeat,
    )


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    """epoch,train_mse,val_mse; val_mse порожнє, якщо валідації не було."""
    frame = pd.DataFrame(
        {
            "epoch": [r.epoch for r in history],
            "train_mse": [r.train_mse for r in history],
            "val_mse": [np.nan if r.val_mse is None else r.val_mse for r in history],
        }
    )
    return frame.to_csv(index=False, float_format="%.17g")


# ----------------- пошук по сітці -----------------

@dataclass(frozen=True)
class GridRow:
    values: Dict[str, Any]
    val_mse: float


@dataclass(frozen=True)
class GridResult:
    best: TrainConfig
    table: List[GridRow]


_TUNABLE = {f.name for f in fields(TrainConfig)} - {"progress", "log_every"}


def _grid_cell(
    config: TrainConfig, train_part: WindowedDataset, val_part: WindowedDataset, a_hat: np.ndarray
) -> float:
    ckpt = train(config, train_part, a_hat)
    return evaluate_mse(ckpt.params, val_part, a_hat)


def grid_search(
    grid: Mapping[str, Sequence[Any]],
    base: TrainConfig,
    dataset: WindowedDataset,
    a_hat: np.ndarray,
    jobs: int = 1,
) -> GridResult:
    """
    Повний перебір декартового добутку кандидатів. Валідація – останні 20 %
    навчальної вибірки. Найкраща конфігурація – з найменшою валідаційною MSE;
    при рівності – менша hidden_feat, потім менша швидкість навчання.
    """
    if not grid:
        raise ContractError("grid search needs at least one hyperparameter")
    for key, candidates in grid.items():
        if key not in _TUNABLE:
            raise ConfigError(f"unknown hyperparameter '{key}'", key=key)
        if len(candidates) == 0:
            raise ContractError(f"empty candidate list for '{key}'")

    train_part, val_part = train_test_split(dataset, 0.8)
    keys = list(grid)
    combos = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    configs = [replace(base, progress=False, **combo) for combo in combos]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            losses = list(pool.map(
                _grid_cell,
                configs,
                itertools.repeat(train_part),
                itertools.repeat(val_part),
                itertools.repeat(a_hat),
            ))
    else:
        losses = [_grid_cell(cfg, train_part, val_part, a_hat) for cfg in configs]

    table = [GridRow(values=combo, val_mse=loss) for combo, loss in zip(combos, losses)]
    for row in table:
        logger.info("grid %s -> val_mse=%.6g", row.values, row.val_mse)

    best_index = min(
        range(len(configs)),
        key=lambda i: (losses[i], configs[i].hidden_feat, configs[i].learning_rate),
    )
    return GridResult(best=configs[best_index], table=table)


# ----------------- чекпоінти -----------------

def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _add_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    """
    Формат: zip-архів без стиснення.
    header.json – формат, версія, конфігурація, порядок вузлів, історія, імена параметрів;
    params/<ім'я>.npy, a_hat.npy, scaler/{mins,maxs}.npy – масиви float64 без втрат.
    """
    named = ckpt.params.named_tensors()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(ckpt.config),
        "site_order": list(ckpt.site_order),
        "interval_minutes": ckpt.interval_minutes,
        "fingerprint": ckpt.fingerprint,
        "repeat": ckpt.repeat,
        "history": [asdict(r) for r in ckpt.history],
        "params": sorted(named),
        "has_scaler": ckpt.scaler is not None,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _add_entry(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(named):
            _add_entry(zf, f"params/{name}.npy", _npy_bytes(named[name].data))
        _add_entry(zf, "a_hat.npy", _npy_bytes(ckpt.a_hat))
        if ckpt.scaler is not None:
            _add_entry(zf, "scaler/mins.npy", _npy_bytes(ckpt.scaler.mins))
            _add_entry(zf, "scaler/maxs.npy", _npy_bytes(ckpt.scaler.maxs))
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> Path:
    return atomic_write_bytes(path, checkpoint_to_bytes(ckpt))


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path, "r") as zf:
            header = json.loads(zf.read("header.json").decode("utf-8"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not a checkpoint file")
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: checkpoint version {header.get('version')} is not supported "
                    f"(expected {CHECKPOINT_VERSION})"
                )

            def read(name: str) -> np.ndarray:
                with zf.open(name) as f:
                    return np.lib.format.read_array(f, allow_pickle=False)

            config = TrainConfig(**header["config"])
            params = init_params(config.model_shape(), seed=0)
            params.load_arrays({name: read(f"params/{name}.npy") for name in header["params"]})
            scaler = None
            if header["has_scaler"]:
                scaler = MinMaxScaler(mins=read("scaler/mins.npy"), maxs=read("scaler/maxs.npy"))
            a_hat = read("a_hat.npy")
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, TypeError, EOFError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None

    return Checkpoint(
        config=config,
        params=params,
        a_hat=a_hat,
        scaler=scaler,
        history=[EpochRecord(**r) for r in header["history"]],
        fingerprint=header["fingerprint"],
        site_order=tuple(header["site_order"]),
        interval_minutes=int(header["interval_minutes"]),
        repeat=int(header["repeat"]),
    )


def check_fingerprint(ckpt: Checkpoint, fingerprint: str, strict: bool = True) -> None:
    """У строгому режимі чекпоінт, навчений на інших даних, відкидається."""
    if ckpt.fingerprint == fingerprint:
        return
    if strict:
        raise CheckpointError(
            f"checkpoint data fingerprint {ckpt.fingerprint[:12]}… does not match input {fingerprint[:12]}…"
        )
    logger.warning("checkpoint was trained on different data (fingerprint mismatch)")
