from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from app.models.errors import ContractError, ShapeError
from app.models.graph import normalize_adjacency
from app.models.networks import (
    PLAIN_GRU,
    STACKED,
    STGBGRU,
    GcnParams,
    GruParams,
    ModelShape,
    forward_sequence,
    gcn2_forward,
    graph_conv,
    gru_cell,
    init_params,
    readout,
    stgbgru_cell,
)
from app.models.tensor import Tensor, finite_difference_check, mse_reduce, sum_reduce

SEEDS = range(10)


def _random_a_hat(rng, n):
    raw = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < 0.5)
    a = np.triu(raw, k=1)
    return normalize_adjacency(a + a.T)


def _zero(params):
    for t in params.named_tensors().values():
        t.assign(np.zeros(t.shape))
    return params


def _as_gru(cell) -> GruParams:
    """Ті самі ваги, але для звичайної GRU-комірки."""
    return GruParams(
        w_xr=cell.w_xr, w_xz=cell.w_xz, w_xh=cell.w_xh,
        w_hr=cell.w_hr, w_hz=cell.w_hz, w_hh=cell.w_hh,
        b_r=cell.b_r, b_z=cell.b_z, b_h=cell.b_h,
    )


# ----------------- GCN -----------------

def test_gcn_with_zero_weights_outputs_zero():
    params = GcnParams(w0=Tensor(np.zeros((2, 3))), w1=Tensor(np.zeros((3, 2))))
    out = gcn2_forward(np.ones((4, 2)), np.eye(4), params)
    assert np.all(out.data == 0.0)


def test_gcn_single_node_by_hand():
    params = GcnParams(w0=Tensor([[3.0]]), w1=Tensor([[0.5]]))
    assert_allclose(gcn2_forward([[2.0]], [[1.0]], params).data, [[3.0]])


def test_gcn_relu_clamps_negative_input():
    params = GcnParams(w0=Tensor([[1.0]]), w1=Tensor([[7.0]]))
    assert gcn2_forward([[-1.0]], [[1.0]], params).data[0, 0] == 0.0


def test_graph_conv_identity_and_zero_weights():
    rng = np.random.default_rng(0)
    z, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    assert_allclose(graph_conv(z, np.eye(4), w).data, z @ w, rtol=0, atol=1e-15)
    assert np.all(graph_conv(z, np.eye(4), np.zeros((3, 2))).data == 0.0)


@pytest.mark.parametrize("seed", SEEDS)
def test_graph_conv_matches_triple_loop(seed):
    rng = np.random.default_rng(seed)
    n, f, g = rng.integers(1, 7), 3, 2
    a, z, w = _random_a_hat(rng, n), rng.normal(size=(n, f)), rng.normal(size=(f, g))

    expected = np.zeros((n, g))
    for i in range(n):
        for k in range(g):
            expected[i, k] = sum(a[i, j] * z[j, c] * w[c, k] for j in range(n) for c in range(f))
    assert_allclose(graph_conv(z, a, w).data, expected, rtol=0, atol=1e-12)


# ----------------- рекурентні комірки -----------------

def test_gru_with_zero_params_halves_state():
    params = _zero(init_params(ModelShape(kind=PLAIN_GRU, hidden_feat=3))).cell
    h = np.array([0.2, -0.4, 1.0])
    assert_allclose(gru_cell([0.7], h, params).data, 0.5 * h)
    assert np.all(gru_cell([0.7], np.zeros(3), params).data == 0.0)


def test_saturated_update_gate_keeps_state():
    params = init_params(ModelShape(kind=PLAIN_GRU, hidden_feat=3), seed=1).cell
    params.b_z.assign(np.full(3, 50.0))
    h = np.array([0.2, -0.4, 0.9])
    assert_allclose(gru_cell([0.3], h, params).data, h, rtol=0, atol=1e-9)


def test_stgbgru_with_zero_params_halves_state():
    params = _zero(init_params(ModelShape(kind=STGBGRU, hidden_feat=3))).cell
    rng = np.random.default_rng(0)
    h = rng.normal(size=(5, 3))
    out = stgbgru_cell(rng.normal(size=(5, 1)), h, _random_a_hat(rng, 5), params)
    assert_allclose(out.data, 0.5 * h)


def test_stgbgru_on_single_node_is_gru():
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=4), seed=2).cell
    x, h = np.array([[0.3]]), np.array([[0.1, -0.2, 0.3, 0.05]])
    expected = gru_cell(x[0], h[0], _as_gru(params)).data
    assert_allclose(stgbgru_cell(x, h, [[1.0]], params).data[0], expected, rtol=0, atol=1e-12)


def test_stgbgru_on_identity_graph_decouples_nodes():
    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(1, 7))
        params = init_params(ModelShape(kind=STGBGRU, hidden_feat=3), seed=trial).cell
        x, h = rng.normal(size=(n, 1)), rng.normal(size=(n, 3))
        fused = stgbgru_cell(x, h, np.eye(n), params).data
        per_node = np.stack([gru_cell(x[i], h[i], _as_gru(params)).data for i in range(n)])
        assert_allclose(fused, per_node, rtol=0, atol=1e-10)


@given(
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(0.1, 10.0),
    inputs=arrays(np.float64, (20, 4, 1), elements=st.floats(-50.0, 50.0)),
)
def test_stgbgru_state_stays_in_unit_box(seed, scale, inputs):
    rng = np.random.default_rng(seed)
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=3), seed=seed % 1000).cell
    for t in params.named().values():
        t.assign(t.data * scale)
    a_hat = _random_a_hat(rng, 4)
    h = rng.uniform(-1.0, 1.0, size=(4, 3))
    for x_t in inputs:
        h = stgbgru_cell(x_t, h, a_hat, params).data
        assert np.all(np.isfinite(h))
        assert np.all(np.abs(h) <= 1.0 + 1e-12)


def test_cell_rejects_mismatched_state():
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=3)).cell
    with pytest.raises(ShapeError):
        stgbgru_cell(np.zeros((4, 1)), np.zeros((5, 3)), np.eye(4), params)


# ----------------- повні моделі -----------------

@pytest.mark.parametrize("kind", [STGBGRU, STACKED, PLAIN_GRU])
def test_zero_model_predicts_readout_bias(kind):
    params = _zero(init_params(ModelShape(kind=kind, hidden_feat=3, gcn_feat=3)))
    params.readout.b_out.assign(np.array([0.42]))
    out = forward_sequence(params, np.random.default_rng(0).uniform(size=(4, 5)), np.eye(5))
    assert_allclose(out.data, np.full(5, 0.42))


def test_single_step_window_is_cell_plus_readout():
    rng = np.random.default_rng(3)
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=4), seed=3)
    a_hat = _random_a_hat(rng, 5)
    window = rng.uniform(size=(1, 5))

    h = stgbgru_cell(window[0][:, None], np.zeros((5, 4)), a_hat, params.cell)
    expected = readout(Tensor(h.data[None]), params.readout).data[0]
    assert_allclose(forward_sequence(params, window, a_hat).data, expected, rtol=0, atol=1e-12)


def test_stacked_on_identity_pipeline_is_plain_gru():
    stacked = init_params(ModelShape(kind=STACKED, hidden_feat=3, gcn_feat=1), seed=4)
    stacked.gcn.w0.assign(np.array([[1.0]]))
    stacked.gcn.w1.assign(np.array([[1.0]]))
    plain = init_params(ModelShape(kind=PLAIN_GRU, hidden_feat=3), seed=0)
    plain.load_arrays(
        {name: t.data for name, t in stacked.named_tensors().items() if not name.startswith("gcn.")}
    )
    window = np.random.default_rng(4).uniform(size=(4, 6))
    assert_allclose(
        forward_sequence(stacked, window, np.eye(6)).data,
        forward_sequence(plain, window, np.eye(6)).data,
        rtol=0,
        atol=1e-12,
    )


def test_stacked_matches_two_stage_composition():
    rng = np.random.default_rng(5)
    params = init_params(ModelShape(kind=STACKED, hidden_feat=3, gcn_feat=2), seed=5)
    a_hat = _random_a_hat(rng, 4)
    window = rng.uniform(size=(3, 4))

    h = np.zeros((4, 3))
    for t in range(3):
        encoded = gcn2_forward(window[t][:, None], a_hat, params.gcn).data
        h = np.stack([gru_cell(encoded[i], h[i], params.cell).data for i in range(4)])
    expected = readout(Tensor(h[None]), params.readout).data[0]
    assert_allclose(forward_sequence(params, window, a_hat).data, expected, rtol=0, atol=1e-12)


def test_batched_forward_matches_single_windows():
    rng = np.random.default_rng(6)
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=4, gcn_depth=2), seed=6)
    a_hat = _random_a_hat(rng, 5)
    windows = rng.uniform(size=(3, 4, 5))
    batched = forward_sequence(params, windows, a_hat).data
    for b in range(3):
        assert_allclose(batched[b], forward_sequence(params, windows[b], a_hat).data, rtol=0, atol=1e-12)


def test_empty_window_is_rejected():
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=2))
    with pytest.raises(ContractError):
        forward_sequence(params, np.zeros((0, 3)), np.eye(3))


# ----------------- ініціалізація -----------------

def test_same_seed_gives_identical_params():
    a = init_params(ModelShape(hidden_feat=5), seed=11).named_tensors()
    b = init_params(ModelShape(hidden_feat=5), seed=11).named_tensors()
    c = init_params(ModelShape(hidden_feat=5), seed=12).named_tensors()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert not np.array_equal(a["cell.w_hz"].data, c["cell.w_hz"].data)


def test_initial_weights_respect_fan_in_bound():
    for seed in range(40):
        params = init_params(ModelShape(kind=PLAIN_GRU, hidden_feat=4), seed=seed)
        for name in ("w_hr", "w_hz", "w_hh"):
            w = getattr(params.cell, name).data
            assert np.all(np.abs(w) <= 0.5)


def test_parameter_names_are_stable():
    names = set(init_params(ModelShape(kind=STGBGRU, hidden_feat=2, gcn_depth=2)).named_tensors())
    assert {"cell.w_xz", "cell.second.w_hh", "cell.b_z", "readout.w_out", "readout.b_out"} <= names
    assert "cell.b_h" not in names


def test_invalid_shape_is_rejected():
    with pytest.raises(ContractError):
        init_params(ModelShape(kind="lstm"))
    with pytest.raises(ContractError):
        init_params(ModelShape(gcn_depth=3))


# ----------------- градієнти -----------------

@pytest.mark.parametrize("seed", SEEDS)
def test_gcn_gradient(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    a_hat, x = _random_a_hat(rng, n), rng.normal(size=(n, 2))
    w1 = Tensor(rng.normal(size=(3, 2)))

    def f(w0):
        return sum_reduce(gcn2_forward(x, a_hat, GcnParams(w0=w0, w1=w1)))

    assert finite_difference_check(f, Tensor(rng.normal(size=(2, 3)))) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_cell_gradient(seed):
    rng = np.random.default_rng(seed)
    params = init_params(ModelShape(kind=PLAIN_GRU, hidden_feat=3, candidate_bias=True), seed=seed).cell
    x, h = rng.normal(size=(4, 1)), rng.normal(size=(4, 3))

    def f(w):
        return sum_reduce(gru_cell(x, h, replace(params, w_hh=w)))

    assert finite_difference_check(f, Tensor(params.w_hh.data)) < 1e-4
    assert finite_difference_check(lambda h_: sum_reduce(gru_cell(x, h_, params)), Tensor(h)) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_stgbgru_cell_gradient(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=3, gcn_depth=1 + seed % 2), seed=seed).cell
    a_hat, x, h = _random_a_hat(rng, n), rng.normal(size=(n, 1)), rng.normal(size=(n, 3))

    def f(w):
        return sum_reduce(stgbgru_cell(x, h, a_hat, replace(params, w_hr=w)))

    assert finite_difference_check(f, Tensor(params.w_hr.data)) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_stacked_model_gradient(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
    params = init_params(ModelShape(kind=STACKED, hidden_feat=3, gcn_feat=2), seed=seed)
    a_hat, window = _random_a_hat(rng, n), rng.uniform(size=(m, n))

    def f(w):
        return sum_reduce(forward_sequence(replace(params, gcn=replace(params.gcn, w1=w)), window, a_hat))

    assert finite_difference_check(f, Tensor(params.gcn.w1.data)) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_full_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
    params = init_params(ModelShape(kind=STGBGRU, hidden_feat=3), seed=seed)
    a_hat = _random_a_hat(rng, n)
    windows, targets = rng.uniform(size=(2, m, n)), rng.uniform(size=(2, n))

    def f(w):
        model = replace(params, cell=replace(params.cell, w_xz=w))
        return mse_reduce(forward_sequence(model, windows, a_hat), targets)

    assert finite_difference_check(f, Tensor(params.cell.w_xz.data)) < 1e-4
