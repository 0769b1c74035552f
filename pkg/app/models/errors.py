from __future__ import annotations

from typing import Optional


class VpsError(Exception):
    """Базовий клас усіх помилок пакета."""


class DomainError(VpsError, ValueError):
    """Значення поза допустимою областю (наприклад, широта > 90)."""


class ValidationError(VpsError, ValueError):
    """Некоректні вхідні дані: дублікати, невідомі вузли, несиметрична матриця."""


class ShapeError(VpsError, ValueError):
    """Несумісні розмірності операндів."""


class ContractError(VpsError, ValueError):
    """Порушено передумову операції."""


class InsufficientDataError(ContractError):
    """Рядів замало для вікна потрібної довжини."""


class IngestionError(ValidationError):
    """Помилка під час читання CSV з кількістю вільних місць."""


class NumericError(VpsError, ArithmeticError):
    """NaN/Inf у обчисленнях."""


class CheckpointError(VpsError, ValueError):
    """Пошкоджений або несумісний файл чекпоінта."""


class TrainingDivergedError(VpsError, RuntimeError):
    """
    Навчання розійшлося.
    epoch – номер епохи (з нуля), на якій це виявлено.
    """

    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss

    def __reduce__(self):
        return type(self), (self.epoch, self.loss)


class ConfigError(VpsError, ValueError):
    """Некоректний ключ або значення конфігурації."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key = key

    def __reduce__(self):
        return type(self), (str(self), self.key)


def shape_mismatch(op: str, a: tuple, b: tuple) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")
