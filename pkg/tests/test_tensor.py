import threading

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.models import tensor as tn
from app.models.errors import ContractError, NumericError, ShapeError
from app.models.tensor import (
    ComputationTape,
    Tensor,
    add_bias,
    backward,
    concat,
    finite_difference_check,
    grad_of,
    hadamard,
    matmul,
    mse_reduce,
    relu,
    reshape,
    sigmoid,
    sum_reduce,
    tanh,
)


# ----------------- прямий прохід -----------------

def test_elementwise_values():
    assert sigmoid(0.0).item() == 0.5
    assert relu(-1.0).item() == 0.0
    assert relu(3.0).item() == 3.0
    assert_allclose(matmul([[1.0, 2.0], [3.0, 4.0]], np.eye(2)).data, [[1.0, 2.0], [3.0, 4.0]])


def test_sigmoid_does_not_overflow():
    out = sigmoid(np.array([-800.0, 800.0])).data
    assert_allclose(out, [0.0, 1.0])


@pytest.mark.parametrize(
    "a_shape, b_shape, out_shape",
    [((2, 3), (3, 4), (2, 4)), ((5, 2, 3), (5, 3, 4), (5, 2, 4)), ((5, 2, 3), (3, 4), (5, 2, 4)), ((2, 3), (5, 3, 4), (5, 2, 4))],
)
def test_matmul_rank_pairs(a_shape, b_shape, out_shape):
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=a_shape), rng.normal(size=b_shape)
    out = matmul(a, b)
    assert out.shape == out_shape
    assert_allclose(out.data, np.matmul(a, b))


@pytest.mark.parametrize(
    "op, a, b",
    [
        (matmul, np.zeros((2, 3)), np.zeros((2, 3))),
        (matmul, np.zeros((4, 2, 3)), np.zeros((5, 3, 2))),
        (hadamard, np.zeros((2, 3)), np.zeros((3, 2))),
        (add_bias, np.zeros((2, 3)), np.zeros(2)),
    ],
)
def test_shape_mismatch_reports_both_shapes(op, a, b):
    with pytest.raises(ShapeError) as info:
        op(a, b)
    assert str(a.shape) in str(info.value)
    assert str(b.shape) in str(info.value)


def test_rank_above_three_is_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_non_finite_input_is_rejected():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])


def test_debug_mode_checks_every_op(monkeypatch):
    monkeypatch.setattr(tn, "_debug", True)
    with pytest.raises(NumericError):
        hadamard(np.array([1e200]), np.array([1e200]))


# ----------------- зворотний прохід -----------------

def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    value, (g,) = grad_of(lambda: sum_reduce(hadamard(x, x)), x)
    assert value == 9.0
    assert g == 6.0


def test_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    _, (g,) = grad_of(lambda: sum_reduce(sigmoid(x)), x)
    assert g == pytest.approx(0.25)


def test_shared_operand_gradients_are_summed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    # f = sum(x + x + x) -> df/dx = 3
    _, (g,) = grad_of(lambda: sum_reduce(tn.add(tn.add(x, x), x)), x)
    assert_allclose(g, [3.0, 3.0])


def test_unused_tensor_has_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([5.0], requires_grad=True)
    _, (_, g) = grad_of(lambda: sum_reduce(x), x, unused)
    assert_allclose(g, [0.0])


def test_mse_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 1))
    y = rng.normal(size=(3, 1))
    w = Tensor(rng.normal(size=(3, 3)))
    assert finite_difference_check(lambda w_: mse_reduce(matmul(w_, x), y), w) < 1e-4


def test_composite_gradient_through_every_primitive():
    rng = np.random.default_rng(2)
    b = rng.normal(size=(2,))
    other = rng.normal(size=(4, 3, 1))
    w = rng.normal(size=(2, 2))

    def f(x):
        h = tanh(add_bias(matmul(x, w), b))
        joined = concat([h, Tensor(other)])
        return sum_reduce(reshape(hadamard(joined, joined), (4, 9)))

    x = Tensor(rng.normal(size=(4, 3, 2)))
    assert finite_difference_check(f, x) < 1e-4


def test_finite_difference_check_examples():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=4))
    assert finite_difference_check(lambda t: sum_reduce(hadamard(t, t)), x) < 1e-6
    assert finite_difference_check(lambda t: Tensor(7.0), x) == 0.0
    assert finite_difference_check(lambda t: sum_reduce(tanh(t)), x) < 1e-4


def test_backward_needs_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ComputationTape() as tape:
        out = hadamard(x, x)
    with pytest.raises(ContractError):
        backward(tape, out)


def test_nothing_is_recorded_without_tape_or_grad():
    x = Tensor([1.0], requires_grad=True)
    relu(x)
    with ComputationTape() as tape:
        relu(Tensor([1.0]))
        sigmoid(x)
    assert tape.ops() == ["sigmoid"]


def test_tapes_are_thread_local():
    results = {}

    def worker():
        results["worker"] = tn.current_tape()

    with ComputationTape():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert results["worker"] is None


def test_item_needs_single_element():
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()
