# config.py
import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from key_service import MAX_MESSAGE_SIZE
from qkd_channel import DEFAULT_QBER_THRESHOLD, DEFAULT_SAMPLE_FRACTION
from qgp_codec import MIN_SESSION_KEY_BITS
from shor_demo import DEFAULT_AMPLITUDE_BUDGET

ENV_PREFIX = "QGP_"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# ===== НАСТРОЙКИ ПО УМОЛЧАНИЮ =====
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "qkd": {
        "qber_threshold": DEFAULT_QBER_THRESHOLD,
        "sample_fraction": DEFAULT_SAMPLE_FRACTION,
        "session_key_bits": MIN_SESSION_KEY_BITS,
    },
    "key_service": {
        "listen": "127.0.0.1:7070",
        "admin_listen": None,
        "db_path": ":memory:",
        "max_frame_bytes": MAX_MESSAGE_SIZE,
        "stale_after_s": None,
    },
    "shor": {
        "amplitude_budget": DEFAULT_AMPLITUDE_BUDGET,
    },
    "logging": {
        "level": "WARNING",
    },
}


def _coerce(raw: str, current: Any) -> Any:
    """Строка из окружения → тип значения по умолчанию."""
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def load_config(path: Optional[Union[str, Path]] = None,
                environ: Optional[Dict[str, str]] = None) -> Dict[str, Dict[str, Any]]:
    """
    DEFAULTS ← YAML-файл (если задан) ← переменные окружения QGP_<SECTION>_<KEY>.
    Например QGP_QKD_QBER_THRESHOLD=0.08.
    """
    config = copy.deepcopy(DEFAULTS)

    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            prefs = yaml.safe_load(f) or {}
        if not isinstance(prefs, dict):
            raise ValueError(f"{path}: ожидался YAML-словарь секций")
        for section, values in prefs.items():
            if section not in config or not isinstance(values, dict):
                raise ValueError(f"{path}: неизвестная секция '{section}'")
            config[section].update(values)

    environ = os.environ if environ is None else environ
    for section, values in config.items():
        for key, current in values.items():
            name = f"{ENV_PREFIX}{section}_{key}".upper()
            if name in environ:
                values[key] = _coerce(environ[name], current)

    return config


def setup_logging(level: Union[str, int] = "WARNING") -> None:
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.WARNING)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    # Flask/engineio болтливы на INFO
    logging.getLogger("werkzeug").setLevel(max(level, logging.WARNING))
    logging.getLogger("engineio").setLevel(max(level, logging.WARNING))
    logging.getLogger("socketio").setLevel(max(level, logging.WARNING))
