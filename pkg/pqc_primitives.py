# pqc_primitives.py
"""
Криптографические примитивы конвейера QGP: хэш, подпись Dilithium3,
KEM Kyber768, AES-256-GCM и DEFLATE.

Все функции чистые: случайность передаётся явно через seed,
общего изменяемого состояния нет.
"""
import copy
import enum
import hashlib
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from dilithium_py.dilithium import Dilithium3
from kyber_py.kyber import Kyber768

log = logging.getLogger(__name__)

# ===== РАЗМЕРЫ ПАРАМЕТРОВ =====
DILITHIUM3_PUBLIC_KEY_BYTES = 1952
DILITHIUM3_SECRET_KEY_BYTES = 4000
DILITHIUM3_SIGNATURE_BYTES = 3293
DILITHIUM3_SEED_BYTES = 32
DILITHIUM3_K = 6          # многочленов в векторе подсказки
DILITHIUM3_OMEGA = 55     # максимум единиц в подсказке

KYBER768_PUBLIC_KEY_BYTES = 1184
KYBER768_SECRET_KEY_BYTES = 2400
KYBER768_CIPHERTEXT_BYTES = 1088
KYBER768_KEYGEN_SEED_BYTES = 64   # d ‖ z
KYBER768_ENCAPS_SEED_BYTES = 32   # m
SHARED_SECRET_BYTES = 32

AEAD_KEY_BYTES = 32
AEAD_NONCE_BYTES = 12
AEAD_TAG_BYTES = 16
DIGEST_BYTES = 32


# ===== ОШИБКИ =====
class PqcError(Exception):
    """Базовая ошибка модуля примитивов."""


class InputFormatError(PqcError, ValueError):
    """Неверная длина ключа, seed или nonce."""


class FormatError(PqcError, ValueError):
    """Повреждённый или обрезанный DEFLATE-поток."""


# ===== ТИПЫ =====
class HashAlgorithm(str, enum.Enum):
    SHA2_256 = "SHA2-256"
    SHA3_256 = "SHA3-256"


class SigScheme(str, enum.Enum):
    DILITHIUM3 = "Dilithium3"


class KemScheme(str, enum.Enum):
    KYBER768 = "Kyber768"


@dataclass(frozen=True)
class Digest:
    algorithm: HashAlgorithm
    value: bytes

    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class SigKeyPair:
    public_key: bytes
    secret_key: bytes
    scheme: SigScheme = SigScheme.DILITHIUM3


@dataclass(frozen=True)
class Signature:
    value: bytes
    scheme: SigScheme = SigScheme.DILITHIUM3


@dataclass(frozen=True)
class KemKeyPair:
    public_key: bytes
    secret_key: bytes
    scheme: KemScheme = KemScheme.KYBER768


@dataclass(frozen=True)
class KemEncapsulation:
    ciphertext: bytes
    shared_secret: bytes


@dataclass(frozen=True)
class AuthFailure:
    """Результат aead_open при несовпадении тега. Это значение, а не исключение."""
    reason: str = "authentication tag mismatch"


class _SeedStream:
    """Отдаёт байты seed по порядку, как DRBG отдаёт их эталонной реализации."""

    def __init__(self, seed: bytes):
        self._buf = bytes(seed)
        self._pos = 0

    def read(self, n: int) -> bytes:
        if self._pos + n > len(self._buf):
            raise InputFormatError(
                f"seed исчерпан: нужно ещё {n} байт, осталось {len(self._buf) - self._pos}"
            )
        chunk = self._buf[self._pos:self._pos + n]
        self._pos += n
        return chunk


def _seeded(scheme, seed: bytes):
    # Копия экземпляра: источник случайности подменяется только у неё
    clone = copy.copy(scheme)
    clone.random_bytes = _SeedStream(seed).read
    return clone


def _require_len(name: str, value: bytes, expected: int) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != expected:
        got = len(value) if isinstance(value, (bytes, bytearray)) else type(value).__name__
        raise InputFormatError(f"{name}: ожидалось {expected} байт, получено {got}")


# ===== ХЕШИРОВАНИЕ =====
def hash_message(message: bytes, algorithm: HashAlgorithm = HashAlgorithm.SHA3_256) -> Digest:
    """32-байтовый дайджест по выбранному стандарту (по умолчанию SHA3-256)."""
    algorithm = HashAlgorithm(algorithm)
    if algorithm is HashAlgorithm.SHA3_256:
        value = hashlib.sha3_256(message).digest()
    else:
        value = hashlib.sha256(message).digest()
    return Digest(algorithm=algorithm, value=value)


# ===== DILITHIUM3 =====
def sig_keygen(seed: bytes) -> SigKeyPair:
    """Детерминированная пара ключей Dilithium3 из 32-байтового seed (zeta)."""
    _require_len("seed", seed, DILITHIUM3_SEED_BYTES)
    pk, sk = _seeded(Dilithium3, seed).keygen()
    return SigKeyPair(public_key=pk, secret_key=sk)


def sign(secret_key: bytes, message: bytes) -> Signature:
    _require_len("secret_key", secret_key, DILITHIUM3_SECRET_KEY_BYTES)
    return Signature(value=Dilithium3.sign(secret_key, message))


def _hint_is_canonical(hint: bytes) -> bool:
    """
    Строгая распаковка подсказки: первые OMEGA байт — индексы единиц,
    последние K — накопленные счётчики по многочленам. dilithium_py этого не проверяет.
    """
    indices, counts = hint[:DILITHIUM3_OMEGA], hint[DILITHIUM3_OMEGA:]
    start = 0
    for end in counts:
        if end < start or end > DILITHIUM3_OMEGA:
            return False
        for j in range(start + 1, end):
            if indices[j] <= indices[j - 1]:
                return False
        start = end
    return not any(indices[start:])


def verify(public_key: bytes, message: bytes, signature: Union[Signature, bytes]) -> bool:
    """
    Проверка подписи. Неверная длина ключа — InputFormatError,
    любая испорченная подпись — просто False.
    """
    _require_len("public_key", public_key, DILITHIUM3_PUBLIC_KEY_BYTES)
    sig = signature.value if isinstance(signature, Signature) else bytes(signature)
    if len(sig) != DILITHIUM3_SIGNATURE_BYTES:
        return False
    if not _hint_is_canonical(sig[-(DILITHIUM3_OMEGA + DILITHIUM3_K):]):
        log.debug("verify: подсказка в подписи не в каноническом виде")
        return False
    try:
        return bool(Dilithium3.verify(public_key, message, sig))
    except Exception as e:  # распаковка мусорной подписи может упасть где угодно
        log.debug("verify: подпись не разобрана: %s", e)
        return False


# ===== KYBER768 =====
def kem_keygen(seed: bytes) -> KemKeyPair:
    """Пара ключей Kyber768; seed = d ‖ z (64 байта)."""
    _require_len("seed", seed, KYBER768_KEYGEN_SEED_BYTES)
    pk, sk = _seeded(Kyber768, seed).keygen()
    return KemKeyPair(public_key=pk, secret_key=sk)


def encaps(public_key: bytes, seed: bytes) -> KemEncapsulation:
    _require_len("public_key", public_key, KYBER768_PUBLIC_KEY_BYTES)
    _require_len("seed", seed, KYBER768_ENCAPS_SEED_BYTES)
    shared_secret, ciphertext = _seeded(Kyber768, seed).encaps(public_key)
    return KemEncapsulation(ciphertext=ciphertext, shared_secret=shared_secret)


def decaps(secret_key: bytes, ciphertext: bytes) -> bytes:
    """
    Восстановление общего секрета. Испорченный шифротекст даёт
    псевдослучайный секрет неявного отказа, исключения нет.
    """
    _require_len("secret_key", secret_key, KYBER768_SECRET_KEY_BYTES)
    if len(ciphertext) != KYBER768_CIPHERTEXT_BYTES:
        # z хранится в последних 32 байтах секретного ключа
        z = secret_key[-32:]
        return hashlib.shake_256(z + hashlib.sha3_256(ciphertext).digest()).digest(SHARED_SECRET_BYTES)
    return Kyber768.decaps(secret_key, ciphertext)


# ===== AES-GCM =====
def aead_seal(key: bytes, nonce: bytes, associated_data: bytes, plaintext: bytes) -> bytes:
    _require_len("key", key, AEAD_KEY_BYTES)
    _require_len("nonce", nonce, AEAD_NONCE_BYTES)
    return AESGCM(key).encrypt(nonce, plaintext, associated_data)


def aead_open(key: bytes, nonce: bytes, associated_data: bytes,
              ciphertext: bytes) -> Union[bytes, AuthFailure]:
    _require_len("key", key, AEAD_KEY_BYTES)
    _require_len("nonce", nonce, AEAD_NONCE_BYTES)
    if len(ciphertext) < AEAD_TAG_BYTES:
        return AuthFailure("ciphertext shorter than tag")
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, associated_data)
    except InvalidTag:
        return AuthFailure()


# ===== СЖАТИЕ =====
def compress(data: bytes) -> bytes:
    """Сырой DEFLATE-поток (RFC 1951), без заголовков zlib/gzip."""
    co = zlib.compressobj(9, zlib.DEFLATED, -15)
    return co.compress(data) + co.flush()


def decompress(data: bytes) -> bytes:
    do = zlib.decompressobj(-15)
    try:
        out = do.decompress(data) + do.flush()
    except zlib.error as e:
        raise FormatError(f"повреждённый DEFLATE-поток: {e}") from e
    if not do.eof:
        raise FormatError("DEFLATE-поток обрезан")
    if do.unused_data:
        raise FormatError("лишние байты после конца DEFLATE-потока")
    return out


# ===== KAT =====
def read_kat_file(path: Union[str, Path]) -> List[Dict[str, str]]:
    """
    Разбор .rsp-файла известных ответов: строки `label = hex`,
    группы разделены пустыми строками, `#` — комментарии.
    """
    groups: List[Dict[str, str]] = []
    current: Dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                groups.append(current)
                current = {}
            continue
        if "=" not in line:
            continue
        label, value = line.split("=", 1)
        current[label.strip()] = value.strip()
    if current:
        groups.append(current)
    return groups
