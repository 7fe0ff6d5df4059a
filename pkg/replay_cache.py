# replay_cache.py
import threading
import time
from typing import Dict, Optional


def _now() -> float:
    return time.time()


def make_replay_tag(flags_qkd: bool, key_id: bytes, nonce_outer: bytes) -> str:
    """Детерминированный ключ реестра: key_id для слоя QKD, иначе nonce_outer."""
    if flags_qkd:
        return f"key:{key_id.hex()}"
    return f"nonce:{nonce_outer.hex()}"


class ReplayRegistry:
    """
    Реестр уже открытых конвертов. Записи не протухают:
    одноразовый ключ одноразов навсегда.
    """

    def __init__(self):
        # tag -> время первого успешного открытия
        self._seen: Dict[str, float] = {}
        self._lock = threading.Lock()

    def seen(self, tag: str) -> bool:
        with self._lock:
            return tag in self._seen

    def record(self, tag: str) -> bool:
        """Атомарная проверка-и-вставка. False — тег уже был (повтор)."""
        with self._lock:
            if tag in self._seen:
                return False
            self._seen[tag] = _now()
            return True

    def first_seen(self, tag: str) -> Optional[float]:
        with self._lock:
            return self._seen.get(tag)

    def clear(self) -> None:
        """Сбросить реестр (для тестов и новых сценариев)."""
        with self._lock:
            self._seen.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)
