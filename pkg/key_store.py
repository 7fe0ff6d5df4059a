# key_store.py
import sqlite3
import threading
import time
from contextlib import contextmanager
from typing import Any, Dict, List, Optional

DB_NAME = ':memory:'


class KeyStore:
    """
    Хранилище буфера ключей на sqlite.
    Одно соединение на весь пул; сериализацию доступа обеспечивает KeyPool.
    """

    def __init__(self, db_path: str = DB_NAME):
        self.db_path = db_path
        self._conn = sqlite3.connect(db_path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row  # Возвращает словари вместо кортежей
        self._lock = threading.Lock()
        self.init_db()

    # ===== СОЗДАНИЕ ТАБЛИЦ =====
    def init_db(self):
        """Создаёт все таблицы если их нет"""
        with self.get_db() as cursor:
            # Таблица ключей
            cursor.execute('''
            CREATE TABLE IF NOT EXISTS keys (
                seq INTEGER PRIMARY KEY AUTOINCREMENT,
                key_id TEXT UNIQUE NOT NULL,
                key_bytes BLOB NOT NULL,
                size_bits INTEGER NOT NULL,
                qber REAL,
                created_at REAL NOT NULL,
                consumed INTEGER DEFAULT 0 CHECK(consumed IN (0, 1)),
                requester TEXT,
                peer TEXT,
                reserved_bits INTEGER
            )
            ''')

            # Состояние пула (одна строка)
            cursor.execute('''
            CREATE TABLE IF NOT EXISTS pool_state (
                id INTEGER PRIMARY KEY CHECK(id = 1),
                alarm INTEGER DEFAULT 0,
                alarm_reason TEXT,
                last_qber REAL DEFAULT 0.0,
                last_ingest_at REAL
            )
            ''')
            cursor.execute("INSERT OR IGNORE INTO pool_state (id) VALUES (1)")

    # ===== ВСПОМОГАТЕЛЬНЫЕ ФУНКЦИИ =====
    @contextmanager
    def get_db(self):
        """Контекстный менеджер для работы с БД"""
        with self._lock:
            cursor = self._conn.cursor()
            try:
                yield cursor
                self._conn.commit()
            except Exception:
                self._conn.rollback()
                raise
            finally:
                cursor.close()

    @staticmethod
    def dict_from_row(row):
        """Преобразует sqlite3.Row в словарь"""
        return dict(row) if row else None

    def close(self):
        self._conn.close()

    # ===== ФУНКЦИИ ДЛЯ KEYS =====
    def add_key(self, key_id: str, key_bytes: bytes, size_bits: int, qber: float) -> bool:
        """Добавить ключ. False, если такой key_id уже есть."""
        with self.get_db() as cursor:
            try:
                cursor.execute(
                    """INSERT INTO keys (key_id, key_bytes, size_bits, qber, created_at)
                       VALUES (?, ?, ?, ?, ?)""",
                    (key_id, key_bytes, size_bits, qber, time.time())
                )
                cursor.execute("UPDATE pool_state SET last_ingest_at = ? WHERE id = 1", (time.time(),))
                return True
            except sqlite3.IntegrityError:
                return False

    def get_key(self, key_id: str) -> Optional[Dict[str, Any]]:
        with self.get_db() as cursor:
            cursor.execute("SELECT * FROM keys WHERE key_id = ?", (key_id,))
            return self.dict_from_row(cursor.fetchone())

    def find_free_key(self, min_bits: int) -> Optional[Dict[str, Any]]:
        """Самый старый непотраченный и незарезервированный ключ длиной >= min_bits."""
        with self.get_db() as cursor:
            cursor.execute(
                """SELECT * FROM keys
                   WHERE consumed = 0 AND requester IS NULL AND size_bits >= ?
                   ORDER BY seq LIMIT 1""",
                (min_bits,)
            )
            return self.dict_from_row(cursor.fetchone())

    def reserve_key(self, key_id: str, requester: str, peer: str, reserved_bits: int) -> bool:
        with self.get_db() as cursor:
            cursor.execute(
                """UPDATE keys SET requester = ?, peer = ?, reserved_bits = ?
                   WHERE key_id = ? AND requester IS NULL AND consumed = 0""",
                (requester, peer, reserved_bits, key_id)
            )
            return cursor.rowcount > 0

    def mark_consumed(self, key_id: str) -> bool:
        with self.get_db() as cursor:
            cursor.execute(
                "UPDATE keys SET consumed = 1 WHERE key_id = ? AND consumed = 0",
                (key_id,)
            )
            return cursor.rowcount > 0

    def stored_bits(self) -> int:
        with self.get_db() as cursor:
            cursor.execute("SELECT COALESCE(SUM(size_bits), 0) FROM keys WHERE consumed = 0")
            return int(cursor.fetchone()[0])

    def list_keys(self) -> List[Dict[str, Any]]:
        """Метаданные всех ключей, без самих байтов."""
        with self.get_db() as cursor:
            cursor.execute(
                """SELECT key_id, size_bits, qber, created_at, consumed, requester, peer, reserved_bits
                   FROM keys ORDER BY seq"""
            )
            return [self.dict_from_row(row) for row in cursor.fetchall()]

    # ===== СОСТОЯНИЕ ПУЛА =====
    def get_state(self) -> Dict[str, Any]:
        with self.get_db() as cursor:
            cursor.execute("SELECT alarm, alarm_reason, last_qber, last_ingest_at FROM pool_state WHERE id = 1")
            state = self.dict_from_row(cursor.fetchone())
        state["alarm"] = bool(state["alarm"])
        return state

    def set_alarm(self, alarm: bool, reason: Optional[str] = None, qber: Optional[float] = None):
        with self.get_db() as cursor:
            if qber is None:
                cursor.execute(
                    "UPDATE pool_state SET alarm = ?, alarm_reason = ? WHERE id = 1",
                    (int(alarm), reason)
                )
            else:
                cursor.execute(
                    "UPDATE pool_state SET alarm = ?, alarm_reason = ?, last_qber = ? WHERE id = 1",
                    (int(alarm), reason, qber)
                )

    def set_last_qber(self, qber: float):
        with self.get_db() as cursor:
            cursor.execute("UPDATE pool_state SET last_qber = ? WHERE id = 1", (qber,))
