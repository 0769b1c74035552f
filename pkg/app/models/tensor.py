"""
Мінімальний рушій щільних тензорів (ранг <= 3) зі зворотним диференціюванням.

Операції записуються на активну стрічку (ComputationTape), якщо хоча б один
вхід вимагає градієнта. Стрічка прив'язана до потоку: різні потоки можуть
вести власні стрічки паралельно.
"""
from __future__ import annotations

import itertools
import os
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, NumericError, ShapeError, shape_mismatch

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

MAX_RANK = 3

_node_ids = itertools.count()
_local = threading.local()
_debug = os.environ.get("PARKING_VPS_DEBUG", "") not in ("", "0")


def set_debug(enabled: bool) -> None:
    """У режимі налагодження кожен результат операції перевіряється на NaN/Inf."""
    global _debug
    _debug = bool(enabled)


def _check_finite(where: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{where}: non-finite value")


class Tensor:
    """
    Тензор: data – масив float64 рангу <= 3, requires_grad – чи потрібен градієнт.
    node_id – унікальний номер вузла на стрічці.
    """

    __slots__ = ("_data", "requires_grad", "node_id", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None) -> None:
        value = np.array(data, dtype=np.float64)
        if value.ndim > MAX_RANK:
            raise ShapeError(f"tensor rank must be <= {MAX_RANK}, got shape {value.shape}")
        _check_finite(name or "tensor", value)
        self._init(value, requires_grad, name)

    def _init(self, value: np.ndarray, requires_grad: bool, name: Optional[str]) -> None:
        self._data = value
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.name = name

    @classmethod
    def _from_op(cls, value: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out._init(value, requires_grad, None)
        return out

    # ----------------- дані -----------------

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    def item(self) -> float:
        if self._data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def assign(self, value: np.ndarray) -> None:
        """
        Оновлення параметра між кроками оптимізації.
        """
        value = np.array(value, dtype=np.float64)
        if value.shape != self._data.shape:
            raise shape_mismatch("assign", self._data.shape, value.shape)
        _check_finite(self.name or "assign", value)
        self._data = value

    def detach(self) -> "Tensor":
        return Tensor._from_op(self._data, False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # оператори для зручності
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ----------------- стрічка -----------------

@dataclass(frozen=True)
class TapeEntry:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class ComputationTape:
    """
    Упорядкований запис операцій. Входи кожного запису з'являються раніше за нього,
    тому порядок запису вже топологічний.
    """

    def __init__(self) -> None:
        self._entries: List[TapeEntry] = []

    def __enter__(self) -> "ComputationTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    @property
    def entries(self) -> Tuple[TapeEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, entry: TapeEntry) -> None:
        self._entries.append(entry)

    def ops(self) -> List[str]:
        return [e.op for e in self._entries]


def _stack() -> List[ComputationTape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional[ComputationTape]:
    stack = _stack()
    return stack[-1] if stack else None


def _result(op: str, value: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    if _debug:
        _check_finite(op, value)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._from_op(value, requires)
    tape = current_tape()
    if requires and tape is not None:
        tape.record(TapeEntry(op, inputs, out, backward_fn))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise shape_mismatch(op, a.shape, b.shape)


# ----------------- примітиви -----------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Матричний добуток для пар рангів (2,2), (3,3) з однаковим батчем,
    (3,2) – спільна права матриця, (2,3) – спільна ліва матриця.
    """
    a, b = as_tensor(a), as_tensor(b)
    ranks = (a.ndim, b.ndim)
    if ranks not in ((2, 2), (3, 3), (3, 2), (2, 3)):
        raise shape_mismatch("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2] or (ranks == (3, 3) and a.shape[0] != b.shape[0]):
        raise shape_mismatch("matmul", a.shape, b.shape)

    x, y = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga = gb = None
        if ranks == (2, 2):
            if need_a:
                ga = g @ y.T
            if need_b:
                gb = x.T @ g
        elif ranks == (3, 3):
            if need_a:
                ga = g @ y.transpose(0, 2, 1)
            if need_b:
                gb = x.transpose(0, 2, 1) @ g
        elif ranks == (3, 2):
            if need_a:
                ga = g @ y.T
            if need_b:
                gb = np.einsum("bnk,bnp->kp", x, g)
        else:
            if need_a:
                ga = np.einsum("bnp,bkp->nk", g, y)
            if need_b:
                gb = np.matmul(x.T, g)
        return ga, gb

    return _result("matmul", np.matmul(x, y), (a, b), backward)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("hadamard", a, b)
    x, y = a.data, b.data
    return _result("hadamard", x * y, (a, b), lambda g: (g * y, g * x))


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    return _result("scale", a.data * factor, (a,), lambda g: (g * factor,))


def shift(a: ArrayLike, offset: float) -> Tensor:
    a = as_tensor(a)
    return _result("shift", a.data + offset, (a,), lambda g: (g,))


def add_bias(x: ArrayLike, bias: ArrayLike) -> Tensor:
    """
    x + b, де b – вектор довжини останньої осі x (зсув однаковий для всіх рядків).
    """
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.ndim != 1 or x.ndim == 0 or x.shape[-1] != bias.shape[0]:
        raise shape_mismatch("add_bias", x.shape, bias.shape)
    lead = tuple(range(x.ndim - 1))
    return _result("add_bias", x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=lead)))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    # 0.5·(1 + tanh(x/2)) не переповнюється для великих |x|
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def concat(tensors: Sequence[ArrayLike]) -> Tensor:
    """Конкатенація по останній осі."""
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ContractError("concat needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or p.shape[:-1] != lead:
            raise shape_mismatch("concat", parts[0].shape, p.shape)
    bounds = np.cumsum([p.shape[-1] for p in parts])[:-1]

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(np.split(g, bounds, axis=-1))

    return _result("concat", np.concatenate([p.data for p in parts], axis=-1), parts, backward)


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise shape_mismatch("reshape", original, shape) from None
    if value.ndim > MAX_RANK:
        raise ShapeError(f"reshape: rank must be <= {MAX_RANK}, got {shape}")
    return _result("reshape", value, (a,), lambda g: (g.reshape(original),))


def sum_reduce(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _result("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mse_reduce(pred: ArrayLike, target: ArrayLike) -> Tensor:
    """Середнє квадратів різниць по всіх елементах; результат – скаляр."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape("mse", pred, target)
    diff = pred.data - target.data
    n = diff.size
    if n == 0:
        raise ContractError("mse of empty tensors")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad = (2.0 / n) * float(g) * diff
        return grad, -grad

    return _result("mse", np.asarray(np.mean(diff * diff)), (pred, target), backward)


# ----------------- зворотний прохід -----------------

class Gradients:
    """
    Градієнти, накопичені за node_id. Тензор поза шляхом до втрати має нульовий градієнт.
    """

    def __init__(self, grads: Dict[int, np.ndarray]) -> None:
        self._grads = grads

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._grads.get(tensor.node_id)
        return np.zeros_like(tensor.data) if g is None else g

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.node_id in self._grads

    def for_named(self, named: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
        return {name: self[t] for name, t in named.items()}


def backward(tape: ComputationTape, loss: Tensor) -> Gradients:
    """
    Обходить стрічку у зворотному порядку рівно один раз.
    Градієнти спільних операндів сумуються.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    _check_finite("loss", loss.data)

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.get(entry.output.node_id)
        if g is None:
            continue
        for tensor, tg in zip(entry.inputs, entry.backward(g)):
            if tg is None or not tensor.requires_grad:
                continue
            prev = grads.get(tensor.node_id)
            grads[tensor.node_id] = tg if prev is None else prev + tg
    return Gradients(grads)


def grad_of(f: Callable[..., Tensor], *params: Tensor) -> Tuple[float, List[np.ndarray]]:
    """Значення f() і градієнти за параметрами одним викликом."""
    with ComputationTape() as tape:
        out = f()
    g = backward(tape, out)
    return out.item(), [g[p] for p in params]


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
) -> float:
    """
    Максимальна відносна похибка аналітичного градієнта відносно центральних різниць:
    max |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ContractError(f"step must be positive, got {step!r}")

    point = Tensor(x.data, requires_grad=True)
    with ComputationTape() as tape:
        out = f(point)
    analytic = backward(tape, out)[point]

    base = np.array(x.data, dtype=np.float64)
    numeric = np.empty_like(base)
    for idx in np.ndindex(*base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += step
        minus[idx] -= step
        f_plus = _scalar(f(Tensor(plus)))
        f_minus = _scalar(f(Tensor(minus)))
        numeric[idx] = (f_plus - f_minus) / (2.0 * step)

    if numeric.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max())


def _scalar(t: Tensor) -> float:
    if t.data.size != 1:
        raise ContractError(f"function must return a scalar, got shape {t.shape}")
    value = float(t.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericError("function evaluation is non-finite")
    return value
