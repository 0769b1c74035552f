from __future__ import annotations

from pathlib import Path
from typing import Optional

DEFAULT_CONFIG = Path(__file__).resolve().parent / "default_config.ini"


def load_default_config(path: Optional[Path] = None) -> str:
    """
    Повертає текст шаблону конфігурації.
    Якщо шлях не задано – береться шаблон з пакета.
    """
    if path is None:
        path = DEFAULT_CONFIG

    with path.open("r", encoding="utf-8") as f:
        return f.read()
