# key_service.py
"""
Сервисный канал (плоскость управления SDN): буфер дистиллированных ключей,
выдача парных сессионных ключей по идентификатору и статус QBER/тревоги.

Протокол: 4 байта длины (big-endian) + JSON-объект в UTF-8.
"""
import asyncio
import base64
import enum
import hashlib
import json
import logging
import socket
import struct
import threading
import time
from typing import Any, Dict, List, Optional, Tuple

from key_store import KeyStore
from qkd_channel import SessionKeyMaterial, pack_bits, unpack_bits
from utils.validators import validate_key_request

log = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
MAX_MESSAGE_SIZE = 1 << 20
SESSION_CHUNK_BITS = 256


class ErrorCode(str, enum.Enum):
    BAD_REQUEST = "BAD_REQUEST"
    ALARM_ACTIVE = "ALARM_ACTIVE"
    INSUFFICIENT_KEY = "INSUFFICIENT_KEY"
    UNKNOWN_KEY_ID = "UNKNOWN_KEY_ID"
    ALREADY_CONSUMED = "ALREADY_CONSUMED"
    PEER_MISMATCH = "PEER_MISMATCH"


ALARM_QBER = "qber"
ALARM_STALE = "stale"


def split_material(material: SessionKeyMaterial,
                   chunk_bits: int = SESSION_CHUNK_BITS) -> List[SessionKeyMaterial]:
    """
    Нарезать ключ раунда на куски по chunk_bits. У каждого куска свой key_id:
    SHA3-256(key_id ‖ номер)[:16]. Хвост короче chunk_bits отбрасывается.
    """
    chunks = []
    for i in range(material.size_bits // chunk_bits):
        chunk_id = hashlib.sha3_256(bytes(material.key_id) + i.to_bytes(4, "big")).digest()[:16]
        chunks.append(SessionKeyMaterial(
            key_id=chunk_id,
            key_bits=material.key_bits[i * chunk_bits:(i + 1) * chunk_bits].copy(),
            qber=material.qber,
            leaked_bits=0,
        ))
    return chunks


def error_response(code: ErrorCode, message: Optional[str] = None) -> Dict[str, Any]:
    resp = {"status": "error", "code": code.value}
    if message:
        resp["message"] = message
    return resp


class KeyPool:
    """
    Единственный владелец буфера ключей. Все операции идут под одной
    блокировкой, поэтому параллельные клиенты видят линейную историю.
    """

    def __init__(self, db_path: str = ":memory:"):
        self.store = KeyStore(db_path)
        self._lock = threading.RLock()

    # ===== ПОПОЛНЕНИЕ =====
    def ingest(self, material: SessionKeyMaterial) -> bool:
        """Положить ключ в буфер. Повторный key_id отклоняется, пул не меняется."""
        key_id = material.key_id.hex()
        with self._lock:
            added = self.store.add_key(key_id, material.key_bytes(), material.size_bits, material.qber)
            if not added:
                log.warning("ingest: key_id %s уже есть в пуле, отклонено", key_id)
                return False
            self.store.set_last_qber(material.qber)
            state = self.store.get_state()
            if state["alarm"] and state["alarm_reason"] == ALARM_STALE:
                self.store.set_alarm(False)
                log.info("ingest: свежий ключ снял тревогу по устареванию")
        log.debug("ingest: %s (%d бит)", key_id, material.size_bits)
        return True

    def ingest_split(self, material: SessionKeyMaterial, chunk_bits: int = SESSION_CHUNK_BITS) -> int:
        """Положить ключ раунда кусками; возвращает число принятых кусков."""
        return sum(self.ingest(chunk) for chunk in split_material(material, chunk_bits))

    # ===== ТРЕВОГА =====
    def raise_alarm(self, qber: float, reason: str = ALARM_QBER):
        with self._lock:
            self.store.set_alarm(True, reason, qber)
        log.warning("тревога (%s): QBER=%.4f, выдача ключей остановлена", reason, qber)

    def clear_alarm(self):
        with self._lock:
            self.store.set_alarm(False)
        log.info("тревога снята")

    def check_staleness(self, max_age_s: float, now: Optional[float] = None) -> bool:
        """Поднять тревогу, если новых ключей не было дольше max_age_s. True — тревога поднята."""
        now = time.time() if now is None else now
        with self._lock:
            state = self.store.get_state()
            last = state["last_ingest_at"]
            if state["alarm"] or (last is not None and now - last <= max_age_s):
                return False
            self.store.set_alarm(True, ALARM_STALE, state["last_qber"])
        log.warning("нет свежих ключей дольше %.0f с — тревога по устареванию", max_age_s)
        return True

    @property
    def alarm(self) -> bool:
        return self.status()["alarm"]

    @property
    def stored_bits(self) -> int:
        return self.store.stored_bits()

    def status(self) -> Dict[str, Any]:
        with self._lock:
            state = self.store.get_state()
            return {
                "status": "ok",
                "qber": state["last_qber"],
                "stored_bits": self.store.stored_bits(),
                "alarm": state["alarm"],
            }

    def list_keys(self) -> List[Dict[str, Any]]:
        with self._lock:
            return self.store.list_keys()

    # ===== ВЫДАЧА =====
    def serve_key(self, request: Any) -> Dict[str, Any]:
        """Ровно один корректный ответ на любой запрос; ошибки — значения."""
        errors = validate_key_request(request)
        if errors:
            return error_response(ErrorCode.BAD_REQUEST, "; ".join(errors))

        op = request["op"]
        if op == "status":
            return self.status()

        with self._lock:
            if self.store.get_state()["alarm"]:
                return error_response(ErrorCode.ALARM_ACTIVE)
            if op == "get_key":
                return self._get_key(request["requester"], request["peer"], request["size_bits"])
            return self._get_key_by_id(request["requester"], request["key_id"])

    def _get_key(self, requester: str, peer: str, size_bits: int) -> Dict[str, Any]:
        entry = self.store.find_free_key(size_bits)
        if entry is None:
            return error_response(ErrorCode.INSUFFICIENT_KEY)
        self.store.reserve_key(entry["key_id"], requester, peer, size_bits)
        log.info("get_key: %s → %s, key_id=%s, %d бит", requester, peer, entry["key_id"], size_bits)
        return self._key_response(entry, size_bits)

    def _get_key_by_id(self, requester: str, key_id: str) -> Dict[str, Any]:
        entry = self.store.get_key(key_id)
        # Незарезервированный ключ для пира не существует
        if entry is None or entry["requester"] is None:
            return error_response(ErrorCode.UNKNOWN_KEY_ID)
        if entry["consumed"]:
            return error_response(ErrorCode.ALREADY_CONSUMED)
        if entry["peer"] != requester:
            return error_response(ErrorCode.PEER_MISMATCH)
        self.store.mark_consumed(key_id)
        log.info("get_key_by_id: %s получил key_id=%s, ключ израсходован", requester, key_id)
        return self._key_response(entry, entry["reserved_bits"])

    @staticmethod
    def _key_response(entry: Dict[str, Any], size_bits: int) -> Dict[str, Any]:
        key = pack_bits(unpack_bits(entry["key_bytes"], size_bits))
        return {
            "status": "ok",
            "key_id": entry["key_id"],
            "key": base64.b64encode(key).decode("ascii"),
            "size_bits": size_bits,
            "qber": entry["qber"],
        }

    # Удобные обёртки для внутрипроцессных клиентов
    def get_key(self, requester: str, peer: str, size_bits: int) -> Dict[str, Any]:
        return self.serve_key({"op": "get_key", "requester": requester, "peer": peer, "size_bits": size_bits})

    def get_key_by_id(self, requester: str, key_id: str) -> Dict[str, Any]:
        return self.serve_key({"op": "get_key_by_id", "requester": requester, "key_id": key_id})


def material_from_response(resp: Dict[str, Any]) -> SessionKeyMaterial:
    """Ответ status=ok → материал сессионного ключа для кодека."""
    key = base64.b64decode(resp["key"])
    return SessionKeyMaterial(
        key_id=bytes.fromhex(resp["key_id"]),
        key_bits=unpack_bits(key, resp["size_bits"]),
        qber=float(resp.get("qber") or 0.0),
        leaked_bits=0,
    )


# ===== КАДРЫ ПРОТОКОЛА =====
def encode_frame(obj: Dict[str, Any]) -> bytes:
    payload = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    return HEADER.pack(len(payload)) + payload


def parse_address(address: str) -> Tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"адрес должен иметь вид host:port, получено {address!r}")
    return host, int(port)


class FrameTooLarge(ValueError):
    pass


class KeyServiceServer:
    """asyncio-сервер протокола выдачи ключей."""

    def __init__(self, pool: KeyPool, host: str = "127.0.0.1", port: int = 0,
                 max_frame_bytes: int = MAX_MESSAGE_SIZE):
        self.pool = pool
        self.max_frame_bytes = max_frame_bytes
        self.host = host
        self.port = port
        self._server: Optional[asyncio.base_events.Server] = None

    async def start(self):
        self._server = await asyncio.start_server(self.handle_client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        log.info("сервис ключей слушает %s:%d", self.host, self.port)
        return self._server

    async def serve_forever(self):
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _read_message(self, reader: asyncio.StreamReader) -> Optional[bytes]:
        try:
            header = await reader.readexactly(HEADER_SIZE)
        except asyncio.IncompleteReadError:
            return None
        (length,) = HEADER.unpack(header)
        if length > self.max_frame_bytes:
            raise FrameTooLarge(f"сообщение слишком большое: {length} байт")
        return await reader.readexactly(length)

    @staticmethod
    async def _write_message(writer: asyncio.StreamWriter, obj: Dict[str, Any]):
        writer.write(encode_frame(obj))
        await writer.drain()

    def process_request(self, raw: bytes) -> Dict[str, Any]:
        try:
            request = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            return error_response(ErrorCode.BAD_REQUEST, f"некорректный JSON: {e}")
        try:
            return self.pool.serve_key(request)
        except Exception as e:
            log.exception("serve_key упал на запросе %r", request)
            return error_response(ErrorCode.BAD_REQUEST, str(e))

    async def handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        log.debug("подключение %s", peer)
        try:
            while True:
                try:
                    raw = await self._read_message(reader)
                except FrameTooLarge as e:
                    await self._write_message(writer, error_response(ErrorCode.BAD_REQUEST, str(e)))
                    break
                except asyncio.IncompleteReadError:
                    break
                if raw is None:
                    break
                await self._write_message(writer, self.process_request(raw))
        except ConnectionError as e:
            log.debug("соединение %s оборвано: %s", peer, e)
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass


class KeyServiceClient:
    """Блокирующий клиент: одно соединение на запрос."""

    def __init__(self, address: str, timeout: float = 10.0):
        self.host, self.port = parse_address(address)
        self.timeout = timeout

    def request(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
            sock.sendall(encode_frame(payload))
            (length,) = HEADER.unpack(self._recv_exactly(sock, HEADER_SIZE))
            if length > MAX_MESSAGE_SIZE:
                raise ConnectionError(f"ответ слишком большой: {length} байт")
            return json.loads(self._recv_exactly(sock, length).decode("utf-8"))

    @staticmethod
    def _recv_exactly(sock: socket.socket, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("соединение закрыто во время чтения")
            buf += chunk
        return bytes(buf)

    def get_key(self, requester: str, peer: str, size_bits: int) -> Dict[str, Any]:
        return self.request({"op": "get_key", "requester": requester, "peer": peer, "size_bits": size_bits})

    def get_key_by_id(self, requester: str, key_id: str) -> Dict[str, Any]:
        return self.request({"op": "get_key_by_id", "requester": requester, "key_id": key_id})

    def status(self) -> Dict[str, Any]:
        return self.request({"op": "status"})
