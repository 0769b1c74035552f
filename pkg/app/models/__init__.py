# Швидкий доступ до базових моделей
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DomainError,
    IngestionError,
    InsufficientDataError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
    ValidationError,
    VpsError,
)
from .graph import GeoPoint, ParkingGraph, build_adjacency, haversine_distance, normalize_adjacency
from .panel import (
    MinMaxScaler,
    TimeSeriesPanel,
    WindowedDataset,
    apply_scaler,
    minmax_normalize,
    sliding_windows,
    train_test_split,
)
from .networks import ModelParams, ModelShape, forward_sequence, init_params
from .metrics import ForecastReport, ReportRow, build_report, compare_reports
