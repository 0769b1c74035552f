from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Union

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import (
    ArrayLike,
    Tensor,
    add,
    add_bias,
    as_tensor,
    hadamard,
    matmul,
    relu,
    reshape,
    scale,
    shift,
    sigmoid,
    tanh,
)

STGBGRU = "stgbgru"
STACKED = "stacked"
PLAIN_GRU = "plain-gru"
MODEL_KINDS = (STGBGRU, STACKED, PLAIN_GRU)

ACTIVATIONS = ("identity", "sigmoid")


@dataclass(frozen=True)
class ModelShape:
    """
    Розмірності моделі.
    kind           – stgbgru | stacked | plain-gru;
    input_feat     – ознак на вузол (кількість вільних місць – 1);
    hidden_feat    – ширина прихованого стану;
    gcn_feat       – ширина GCN-кодера у stacked-моделі;
    gcn_depth      – 1: *G = A·Z·W; 2: *G = A·ReLU(A·Z·W)·W';
    candidate_bias – додати зсув у кандидатний стан (у формулі його немає).
    """
    kind: str = STGBGRU
    input_feat: int = 1
    hidden_feat: int = 64
    gcn_feat: int = 64
    gcn_depth: int = 1
    candidate_bias: bool = False
    gcn_activation: str = "identity"

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ContractError(f"unknown model kind '{self.kind}', expected one of {MODEL_KINDS}")
        for name in ("input_feat", "hidden_feat", "gcn_feat"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gcn_depth not in (1, 2):
            raise ContractError(f"gcn_depth must be 1 or 2, got {self.gcn_depth}")
        if self.gcn_activation not in ACTIVATIONS:
            raise ContractError(f"unknown GCN activation '{self.gcn_activation}'")


# ----------------- параметри -----------------

@dataclass
class GcnParams:
    """Двошаровий GCN: W0 (C_in × C_hid), W1 (C_hid × C_out)."""
    w0: Tensor
    w1: Tensor
    output_activation: str = "identity"

    def named(self) -> Dict[str, Tensor]:
        return {"w0": self.w0, "w1": self.w1}


@dataclass
class GruParams:
    """
    Звичайна GRU-комірка.
    w_x* – input_dim × hidden_dim, w_h* – hidden_dim × hidden_dim, b_r/b_z – зсуви воріт.
    """
    w_xr: Tensor
    w_xz: Tensor
    w_xh: Tensor
    w_hr: Tensor
    w_hz: Tensor
    w_hh: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Optional[Tensor] = None

    def named(self) -> Dict[str, Tensor]:
        return _named_fields(self)


@dataclass
class StgbgruParams:
    """
    Комірка, де кожен лінійний доданок воріт замінено графовою згорткою *G.
    second_layer – другі матриці для gcn_depth = 2 (ключі як у полів w_*).
    """
    w_xz: Tensor
    w_hz: Tensor
    w_xr: Tensor
    w_hr: Tensor
    w_xh: Tensor
    w_hh: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Optional[Tensor] = None
    second_layer: Dict[str, Tensor] = field(default_factory=dict)

    def named(self) -> Dict[str, Tensor]:
        out = _named_fields(self)
        out.update({f"second.{k}": v for k, v in sorted(self.second_layer.items())})
        return out


@dataclass
class ReadoutParams:
    """Спільне для всіх вузлів афінне відображення hidden_feat -> 1."""
    w_out: Tensor
    b_out: Tensor

    def named(self) -> Dict[str, Tensor]:
        return {"w_out": self.w_out, "b_out": self.b_out}


CellParams = Union[StgbgruParams, GruParams]


@dataclass
class ModelParams:
    shape: ModelShape
    cell: CellParams
    readout: ReadoutParams
    gcn: Optional[GcnParams] = None

    def named_tensors(self) -> Dict[str, Tensor]:
        """Усі тензори параметрів зі стабільними іменами (для оптимізатора і чекпоінтів)."""
        out: Dict[str, Tensor] = {}
        if self.gcn is not None:
            out.update({f"gcn.{k}": v for k, v in self.gcn.named().items()})
        out.update({f"cell.{k}": v for k, v in self.cell.named().items()})
        out.update({f"readout.{k}": v for k, v in self.readout.named().items()})
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        named = self.named_tensors()
        if set(named) != set(arrays):
            missing = sorted(set(named) - set(arrays))
            extra = sorted(set(arrays) - set(named))
            raise ShapeError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, tensor in named.items():
            tensor.assign(arrays[name])


def _named_fields(params) -> Dict[str, Tensor]:
    out: Dict[str, Tensor] = {}
    for f in fields(params):
        value = getattr(params, f.name)
        if isinstance(value, Tensor):
            out[f.name] = value
    return out


# ----------------- графові операції -----------------

def _activate(name: str, x: Tensor) -> Tensor:
    if name == "identity":
        return x
    if name == "sigmoid":
        return sigmoid(x)
    raise ContractError(f"unknown activation '{name}'")


def graph_conv(z: ArrayLike, a_hat: ArrayLike, w: ArrayLike) -> Tensor:
    """Одна графова згортка A_hat · Z · W; Z – N×F або B×N×F."""
    return matmul(as_tensor(a_hat), matmul(as_tensor(z), as_tensor(w)))


def gcn2_forward(x: ArrayLike, a_hat: ArrayLike, params: GcnParams) -> Tensor:
    """act(A_hat · ReLU(A_hat · X · W0) · W1)."""
    a = as_tensor(a_hat)
    hidden = relu(graph_conv(x, a, params.w0))
    return _activate(params.output_activation, graph_conv(hidden, a, params.w1))


# ----------------- рекурентні комірки -----------------

def _blend(z: Tensor, h_prev: Tensor, candidate: Tensor) -> Tensor:
    # z ⊙ h_prev + (1 - z) ⊙ candidate
    return add(hadamard(z, h_prev), hadamard(shift(scale(z, -1.0), 1.0), candidate))


def gru_cell(x_t: ArrayLike, h_prev: ArrayLike, params: GruParams) -> Tensor:
    """
    r = σ(x·w_xr + h·w_hr + b_r)
    z = σ(x·w_xz + h·w_hz + b_z)
    h~ = tanh(x·w_xh + (r ⊙ h)·w_hh)
    h_t = z ⊙ h + (1 - z) ⊙ h~
    Вектори приймаються як рядки (1-D).
    """
    x, h = as_tensor(x_t), as_tensor(h_prev)
    vector = x.ndim == 1
    if vector:
        x = reshape(x, (1, x.shape[0]))
        h = reshape(h, (1, h.shape[0]))
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"gru_cell: input {x.shape} and state {h.shape} disagree on leading axes")

    r = sigmoid(add_bias(add(matmul(x, params.w_xr), matmul(h, params.w_hr)), params.b_r))
    z = sigmoid(add_bias(add(matmul(x, params.w_xz), matmul(h, params.w_hz)), params.b_z))
    pre = add(matmul(x, params.w_xh), matmul(hadamard(r, h), params.w_hh))
    if params.b_h is not None:
        pre = add_bias(pre, params.b_h)
    h_t = _blend(z, h, tanh(pre))

    if vector:
        h_t = reshape(h_t, (h_t.shape[-1],))
    return h_t


def stgbgru_cell(x_t: ArrayLike, h_prev: ArrayLike, a_hat: ArrayLike, params: StgbgruParams) -> Tensor:
    """
    Те саме, що gru_cell, але кожен добуток – графова згортка:
    z = σ(X *G W_xz + H *G W_hz + b_z), r = σ(X *G W_xr + H *G W_hr + b_r),
    H~ = tanh(X *G W_xh + (r ⊙ H) *G W_hh), H_t = z ⊙ H + (1 - z) ⊙ H~.
    """
    x, h, a = as_tensor(x_t), as_tensor(h_prev), as_tensor(a_hat)
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"stgbgru_cell: input {x.shape} and state {h.shape} disagree on leading axes")

    def term(z: Tensor, name: str) -> Tensor:
        w = getattr(params, name)
        second = params.second_layer.get(name)
        if second is None:
            return graph_conv(z, a, w)
        return graph_conv(relu(graph_conv(z, a, w)), a, second)

    z = sigmoid(add_bias(add(term(x, "w_xz"), term(h, "w_hz")), params.b_z))
    r = sigmoid(add_bias(add(term(x, "w_xr"), term(h, "w_hr")), params.b_r))
    pre = add(term(x, "w_xh"), term(hadamard(r, h), "w_hh"))
    if params.b_h is not None:
        pre = add_bias(pre, params.b_h)
    return _blend(z, h, tanh(pre))


def readout(h: Tensor, params: ReadoutParams) -> Tensor:
    """H·W_out + b_out для кожного вузла; B×N×F -> B×N."""
    y = add_bias(matmul(h, params.w_out), params.b_out)
    return reshape(y, y.shape[:-1])


# ----------------- розгортання в часі -----------------

def _as_frames(window: np.ndarray, input_feat: int) -> np.ndarray:
    """Приводить вікно до B×m×N×F."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim == 2:
        w = w[None, :, :, None]
    elif w.ndim == 3:
        w = w[:, :, :, None]
    elif w.ndim != 4:
        raise ShapeError(f"window must be m×N, B×m×N or B×m×N×F, got shape {w.shape}")
    if w.shape[1] == 0:
        raise ContractError("window length must be >= 1")
    if w.shape[-1] != input_feat:
        raise ShapeError(f"window has {w.shape[-1]} features per node, model expects {input_feat}")
    return w


def _initial_state(frames: np.ndarray, hidden: int) -> Tensor:
    batch, _, nodes, _ = frames.shape
    return Tensor(np.zeros((batch, nodes, hidden)))


def stacked_gcn_gru_forward(
    window: np.ndarray,
    a_hat: ArrayLike,
    gcn: GcnParams,
    gru: GruParams,
    head: ReadoutParams,
) -> Tensor:
    """
    Базова модель GCN+GRU: GCN обробляє лише вхідні кадри, прихований стан
    між вузлами не змішується.
    """
    frames = _as_frames(window, gcn.w0.shape[0])
    a = as_tensor(a_hat)
    h = _initial_state(frames, gru.w_hh.shape[0])
    for t in range(frames.shape[1]):
        encoded = gcn2_forward(Tensor(frames[:, t]), a, gcn)
        h = gru_cell(encoded, h, gru)
    return readout(h, head)


def forward_sequence(model: ModelParams, window: np.ndarray, a_hat: ArrayLike) -> Tensor:
    """
    Розгортає комірку на m кроків з H_0 = 0 і повертає нормалізований прогноз
    для кожного вузла: N для вікна m×N, B×N для батча.
    """
    single = np.ndim(window) == 2
    kind = model.shape.kind
    if kind == STACKED:
        if model.gcn is None or not isinstance(model.cell, GruParams):
            raise ContractError("stacked model needs GCN and GRU parameters")
        y = stacked_gcn_gru_forward(window, a_hat, model.gcn, model.cell, model.readout)
    else:
        frames = _as_frames(window, model.shape.input_feat)
        a = as_tensor(a_hat)
        h = _initial_state(frames, model.shape.hidden_feat)
        for t in range(frames.shape[1]):
            x_t = Tensor(frames[:, t])
            if kind == STGBGRU:
                h = stgbgru_cell(x_t, h, a, model.cell)
            else:
                h = gru_cell(x_t, h, model.cell)
        y = readout(h, model.readout)

    if single:
        y = reshape(y, (y.shape[-1],))
    return y


# ----------------- ініціалізація -----------------

class _Initializer:
    """uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) для ваг, нулі для зсувів."""

    def __init__(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        bound = np.sqrt(1.0 / fan_in)
        data = self._rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return Tensor(data, requires_grad=True, name=name)

    @staticmethod
    def bias(name: str, width: int) -> Tensor:
        return Tensor(np.zeros(width), requires_grad=True, name=name)


def _init_gru(init: _Initializer, input_dim: int, hidden: int, candidate_bias: bool) -> GruParams:
    return GruParams(
        w_xr=init.weight("w_xr", input_dim, hidden),
        w_xz=init.weight("w_xz", input_dim, hidden),
        w_xh=init.weight("w_xh", input_dim, hidden),
        w_hr=init.weight("w_hr", hidden, hidden),
        w_hz=init.weight("w_hz", hidden, hidden),
        w_hh=init.weight("w_hh", hidden, hidden),
        b_r=init.bias("b_r", hidden),
        b_z=init.bias("b_z", hidden),
        b_h=init.bias("b_h", hidden) if candidate_bias else None,
    )


def _init_stgbgru(init: _Initializer, shape: ModelShape) -> StgbgruParams:
    f_in, hid = shape.input_feat, shape.hidden_feat
    fan = {"w_xz": f_in, "w_hz": hid, "w_xr": f_in, "w_hr": hid, "w_xh": f_in, "w_hh": hid}
    first = {name: init.weight(name, fan_in, hid) for name, fan_in in fan.items()}
    second: Dict[str, Tensor] = {}
    if shape.gcn_depth == 2:
        second = {name: init.weight(f"{name}.2", hid, hid) for name in fan}
    return StgbgruParams(
        b_z=init.bias("b_z", hid),
        b_r=init.bias("b_r", hid),
        b_h=init.bias("b_h", hid) if shape.candidate_bias else None,
        second_layer=second,
        **first,
    )


def init_params(shape: ModelShape, seed: int = 0) -> ModelParams:
    """Детермінована ініціалізація: однаковий seed – однакові параметри до біта."""
    shape.validate()
    init = _Initializer(seed)

    gcn: Optional[GcnParams] = None
    if shape.kind == STGBGRU:
        cell: CellParams = _init_stgbgru(init, shape)
    elif shape.kind == STACKED:
        gcn = GcnParams(
            w0=init.weight("w0", shape.input_feat, shape.gcn_feat),
            w1=init.weight("w1", shape.gcn_feat, shape.gcn_feat),
            output_activation=shape.gcn_activation,
        )
        cell = _init_gru(init, shape.gcn_feat, shape.hidden_feat, shape.candidate_bias)
    else:
        cell = _init_gru(init, shape.input_feat, shape.hidden_feat, shape.candidate_bias)

    head = ReadoutParams(
        w_out=init.weight("w_out", shape.hidden_feat, 1),
        b_out=init.bias("b_out", 1),
    )
    return ModelParams(shape=shape, cell=cell, readout=head, gcn=gcn)
