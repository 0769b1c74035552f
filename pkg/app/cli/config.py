from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from app.models.errors import ConfigError, ContractError
from app.models.graph import WEIGHT_MODES
from app.models.networks import MODEL_KINDS
from app.models.panel import horizon_steps
from app.resources import load_default_config
from app.services.forecast_service import METHODS
from app.services.training_service import TrainConfig

OUTPUT_DIR_ENV = "PARKING_VPS_OUTPUT_DIR"


# ------------------ Розбір значень ------------------

def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _optional_path(value: str) -> Optional[Path]:
    return Path(value.strip()) if value.strip() else None


def _optional_float(value: str) -> Optional[float]:
    return float(value) if value.strip() else None


def _str_list(value: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())


def _int_list(value: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in _str_list(value))


# секція -> ключ -> перетворення; усе, чого тут немає, – помилка
_SCHEMA: Dict[str, Dict[str, Callable[[str], object]]] = {
    "paths": {
        "series": lambda v: Path(v.strip()),
        "coords": lambda v: Path(v.strip()),
        "output_dir": lambda v: Path(v.strip()),
        "capacity": _optional_path,
    },
    "graph": {
        "epsilon": float,
        "radius": float,
        "weight_mode": str.strip,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "window": int,
        "model_kinds": _str_list,
        "hidden_feat": int,
        "gcn_feat": int,
        "gcn_depth": int,
        "candidate_bias": _bool,
        "clip_norm": _optional_float,
        "log_every": int,
    },
    "experiment": {
        "horizons_min": _int_list,
        "methods": _str_list,
        "repeats": int,
        "seed_base": int,
        "train_ratio": float,
        "interval_minutes": int,
        "global_scaling": _bool,
        "strict": _bool,
        "round_counts": _bool,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Усі параметри відтворюваного експерименту.
    train – шаблон TrainConfig; вид моделі, горизонт і seed підставляються для кожної клітинки.
    """
    series: Path
    coords: Path
    output_dir: Path
    capacity: Optional[Path]
    epsilon: float
    radius: float
    weight_mode: str
    train: TrainConfig
    model_kinds: Tuple[str, ...]
    horizons_min: Tuple[int, ...]
    methods: Tuple[str, ...]
    repeats: int
    seed_base: int
    train_ratio: float
    interval_minutes: int
    global_scaling: bool
    strict: bool
    round_counts: bool

    @property
    def checkpoint_dir(self) -> Path:
        return self.output_dir / "checkpoints"

    def seeds(self) -> List[int]:
        """seed повтору i = seed_base + i."""
        return [self.seed_base + i for i in range(self.repeats)]

    def horizon_steps(self) -> List[int]:
        return [horizon_steps(m, self.interval_minutes) for m in self.horizons_min]

    def train_steps(self) -> List[int]:
        """
        Горизонти (у кроках), для яких потрібні моделі:
        direct – кожен горизонт, iterative – лише одношагова.
        """
        steps = set()
        if "direct" in self.methods:
            steps.update(self.horizon_steps())
        if "iterative" in self.methods:
            steps.add(1)
        return sorted(steps)

    def train_config(self, kind: str, horizon: int, repeat: int) -> TrainConfig:
        return replace(self.train, model_kind=kind, horizon=horizon, seed=self.seed_base + repeat)

    def validate(self) -> None:
        def fail(key: str, message: str) -> None:
            raise ConfigError(f"{key}: {message}", key=key)

        if self.epsilon < 0:
            fail("graph.epsilon", f"must be >= 0, got {self.epsilon}")
        if self.weight_mode not in WEIGHT_MODES:
            fail("graph.weight_mode", f"must be one of {', '.join(WEIGHT_MODES)}")
        if self.repeats < 1:
            fail("experiment.repeats", f"must be >= 1, got {self.repeats}")
        if self.interval_minutes < 1:
            fail("experiment.interval_minutes", f"must be >= 1, got {self.interval_minutes}")
        if not 0.0 < self.train_ratio < 1.0:
            fail("experiment.train_ratio", f"must lie in (0, 1), got {self.train_ratio}")
        if not self.horizons_min:
            fail("experiment.horizons_min", "at least one horizon is required")
        try:
            self.horizon_steps()
        except ContractError as exc:
            fail("experiment.horizons_min", str(exc))
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            fail("experiment.methods", f"expected a subset of {', '.join(METHODS)}, got {list(self.methods)}")
        unknown = [k for k in self.model_kinds if k not in MODEL_KINDS]
        if unknown or not self.model_kinds:
            fail("train.model_kinds", f"expected a subset of {', '.join(MODEL_KINDS)}, got {list(self.model_kinds)}")
        if self.train.gcn_depth not in (1, 2):
            fail("train.gcn_depth", f"must be 1 or 2, got {self.train.gcn_depth}")
        try:
            self.train.validate()
        except ContractError as exc:
            fail("train", str(exc))


# ------------------ Завантаження ------------------

def _check_known(parser: configparser.ConfigParser, source: str) -> None:
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]", key=section)
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{section}.{key}'", key=f"{section}.{key}")


def _read(text: str, source: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return parser


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Optional[str]]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """
    Збирає конфігурацію: шаблон з пакета < файл < overrides ("секція.ключ" -> текст) < оточення.
    None у overrides означає «прапорець не задано».
    """
    merged = _read(load_default_config(), "<defaults>")

    if path is not None:
        path = Path(path)
        user = _read(path.read_text(encoding="utf-8"), str(path))
        _check_known(user, str(path))
        for section in user.sections():
            for key, value in user[section].items():
                merged.set(section, key, value)

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if key not in _SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key '{dotted}'", key=dotted)
        merged.set(section, key, value)

    environ = os.environ if environ is None else environ
    if environ.get(OUTPUT_DIR_ENV):
        merged.set("paths", "output_dir", environ[OUTPUT_DIR_ENV])

    config = _build(merged)
    config.validate()
    return config


def _build(parser: configparser.ConfigParser) -> ExperimentConfig:
    values: Dict[str, Dict[str, object]] = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, convert in keys.items():
            raw = parser.get(section, key)
            try:
                values[section][key] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}", key=f"{section}.{key}") from None

    train = dict(values["train"])
    model_kinds = train.pop("model_kinds")
    exp = values["experiment"]
    return ExperimentConfig(
        train=TrainConfig(**train),
        model_kinds=model_kinds,
        **values["paths"],
        **values["graph"],
        **exp,
    )
