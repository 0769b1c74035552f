# Adam: власний крок для кожного параметра з виправлених на зсув оцінок першого і другого моментів

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor

Arrays = Dict[str, np.ndarray]


@dataclass(frozen=True)
class AdamState:
    """
    step – кількість виконаних кроків;
    m, v – ковзні оцінки першого і другого моментів градієнта.
    """
    step: int = 0
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Arrays) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Arrays,
    grads: Arrays,
    state: AdamState,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Arrays, AdamState]:
    """
    Один крок Adam. Не змінює вхідні масиви: повертає нові параметри і стан.
    """
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr!r}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for '{name}'")

    t = state.step + 1
    # поправки на зсув спільні для всіх параметрів кроку
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    new_params: Arrays = {}
    new_m: Arrays = {}
    new_v: Arrays = {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def clip_by_global_norm(grads: Arrays, max_norm: float) -> Arrays:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


class Adam:
    """
    Обгортка над adam_step для іменованих тензорів моделі.
    Параметри оновлюються лише між кроками, не під час проходу.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.zeros({k: t.data for k, t in params.items()})

    def step(self, grads: Arrays) -> None:
        current = {k: t.data for k, t in self.params.items()}
        updated, self.state = adam_step(
            current, grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
        for name, tensor in self.params.items():
            tensor.assign(updated[name])
