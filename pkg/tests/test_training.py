import zipfile

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.models.errors import CheckpointError, ConfigError, ContractError, TrainingDivergedError
from app.models.panel import WindowedDataset, minmax_normalize, sliding_windows, train_test_split
from app.services.storage import file_fingerprint
from app.services.training_service import (
    EpochRecord,
    TrainConfig,
    check_fingerprint,
    checkpoint_to_bytes,
    evaluate_mse,
    grid_search,
    history_to_csv,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    train,
)

SMALL = TrainConfig(epochs=3, batch_size=32, learning_rate=0.01, window=4, hidden_feat=4, gcn_feat=4, log_every=0)


@pytest.fixture
def windows(synthetic_panel):
    panel = minmax_normalize(synthetic_panel)
    return panel, sliding_windows(panel, window=4, horizon=1)


# ----------------- втрата -----------------

def test_loss_examples():
    assert mse_loss([0.0], [2.0]).item() == 4.0
    assert mse_loss([[1.0, 3.0]], [[0.0, 0.0]]).item() == 5.0
    assert mse_loss([1.5, 2.5], [1.5, 2.5]).item() == 0.0


# ----------------- навчання -----------------

def test_zero_epochs_keeps_initial_params(windows, synthetic_graph):
    _, ds = windows
    ckpt = train(TrainConfig(epochs=0, window=4, hidden_feat=4, seed=9), ds, synthetic_graph.normalized)
    again = train(TrainConfig(epochs=0, window=4, hidden_feat=4, seed=9), ds, synthetic_graph.normalized)
    assert ckpt.history == []
    for name, t in ckpt.params.named_tensors().items():
        assert np.array_equal(t.data, again.params.named_tensors()[name].data)


def test_same_seed_same_history(windows, synthetic_graph):
    _, ds = windows
    a = train(SMALL, ds, synthetic_graph.normalized)
    b = train(SMALL, ds, synthetic_graph.normalized)
    assert a.history == b.history
    assert checkpoint_to_bytes(a) == checkpoint_to_bytes(b)
    assert [r.epoch for r in a.history] == [0, 1, 2]


@pytest.mark.parametrize("kind", ["stgbgru", "stacked", "plain-gru"])
def test_training_reduces_loss(windows, synthetic_graph, kind):
    _, ds = windows
    train_part, test_part = train_test_split(ds, 0.8)
    config = TrainConfig(
        epochs=15, batch_size=16, learning_rate=0.01, window=4, hidden_feat=4, gcn_feat=4,
        model_kind=kind, log_every=0,
    )
    ckpt = train(config, train_part, synthetic_graph.normalized, validation=test_part)
    assert ckpt.history[-1].train_mse < ckpt.history[0].train_mse
    assert ckpt.history[-1].val_mse == pytest.approx(
        evaluate_mse(ckpt.params, test_part, synthetic_graph.normalized)
    )


def test_divergence_is_reported_with_epoch(synthetic_graph):
    ds = WindowedDataset(
        inputs=np.zeros((4, 2, 8)), targets=np.full((4, 8), 1e4), window=2, horizon=1
    )
    with pytest.raises(TrainingDivergedError) as info:
        train(TrainConfig(epochs=2, window=2, hidden_feat=2), ds, synthetic_graph.normalized)
    assert info.value.epoch == 0


def test_mismatched_inputs_are_rejected(windows, synthetic_graph):
    _, ds = windows
    with pytest.raises(ContractError):
        train(TrainConfig(epochs=1, window=5, hidden_feat=2), ds, synthetic_graph.normalized)
    with pytest.raises(ContractError):
        train(TrainConfig(epochs=-1, window=4), ds, synthetic_graph.normalized)


def test_history_csv():
    history = [EpochRecord(epoch=0, train_mse=0.5), EpochRecord(epoch=1, train_mse=0.25, val_mse=0.3)]
    text = history_to_csv(history)
    assert text.splitlines()[0] == "epoch,train_mse,val_mse"
    assert text.splitlines()[1] == "0,0.5,"
    assert float(text.splitlines()[2].split(",")[2]) == 0.3
    assert history_to_csv([EpochRecord(epoch=0, train_mse=0.5)]).splitlines()[1] == "0,0.5,"


# ----------------- пошук по сітці -----------------

def test_singleton_grid_returns_base(windows, synthetic_graph):
    _, ds = windows
    result = grid_search({"hidden_feat": [4]}, SMALL, ds, synthetic_graph.normalized)
    assert result.best == SMALL
    assert len(result.table) == 1


def test_grid_finds_planted_optimum(windows, synthetic_graph):
    _, ds = windows
    base = TrainConfig(batch_size=16, learning_rate=0.01, window=4, hidden_feat=4, log_every=0)
    result = grid_search({"epochs": [0, 15]}, base, ds, synthetic_graph.normalized)
    assert [row.values for row in result.table] == [{"epochs": 0}, {"epochs": 15}]
    assert result.best.epochs == 15


def test_grid_rejects_unknown_or_empty(windows, synthetic_graph):
    _, ds = windows
    with pytest.raises(ConfigError):
        grid_search({"dropout": [0.1]}, SMALL, ds, synthetic_graph.normalized)
    with pytest.raises(ContractError):
        grid_search({}, SMALL, ds, synthetic_graph.normalized)
    with pytest.raises(ContractError):
        grid_search({"hidden_feat": []}, SMALL, ds, synthetic_graph.normalized)


# ----------------- чекпоінти -----------------

def test_checkpoint_round_trip_is_exact(tmp_path, windows, synthetic_graph):
    panel, ds = windows
    ckpt = train(SMALL, ds, synthetic_graph.normalized, scaler=panel.scaler, fingerprint="abc", repeat=2)
    path = save_checkpoint(ckpt, tmp_path / "model.npz")
    loaded = load_checkpoint(path)

    assert loaded.config == ckpt.config
    assert loaded.history == ckpt.history
    assert loaded.repeat == 2
    assert loaded.site_order == ckpt.site_order
    assert np.array_equal(loaded.scaler.mins, panel.scaler.mins)
    for name, t in ckpt.params.named_tensors().items():
        assert np.array_equal(loaded.params.named_tensors()[name].data, t.data)
    assert checkpoint_to_bytes(loaded) == path.read_bytes()

    sample = ds.inputs[:5]
    assert np.array_equal(loaded.predict_normalized(sample), ckpt.predict_normalized(sample))


def test_truncated_checkpoint_is_rejected(tmp_path, windows, synthetic_graph):
    _, ds = windows
    path = save_checkpoint(train(TrainConfig(epochs=0, window=4, hidden_feat=2), ds, synthetic_graph.normalized), tmp_path / "m.npz")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_foreign_zip_is_rejected(tmp_path):
    path = tmp_path / "other.npz"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("header.json", '{"format": "something-else", "version": 1}')
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_fingerprint_mismatch(tmp_path, caplog, windows, synthetic_graph):
    _, ds = windows
    data = tmp_path / "series.csv"
    data.write_text("timestamp,site_id,available\n", encoding="utf-8")
    fp = file_fingerprint(data)
    ckpt = train(TrainConfig(epochs=0, window=4, hidden_feat=2), ds, synthetic_graph.normalized, fingerprint=fp)

    check_fingerprint(ckpt, fp)
    with pytest.raises(CheckpointError):
        check_fingerprint(ckpt, "0" * 64)
    check_fingerprint(ckpt, "0" * 64, strict=False)
    assert "fingerprint mismatch" in caplog.text


def test_evaluate_mse_of_constant_prediction(windows, synthetic_graph):
    _, ds = windows
    ckpt = train(TrainConfig(epochs=0, window=4, hidden_feat=2), ds, synthetic_graph.normalized)
    pred = ckpt.predict_normalized(ds.inputs)
    assert_allclose(evaluate_mse(ckpt.params, ds, synthetic_graph.normalized), np.mean((pred - ds.targets) ** 2))
