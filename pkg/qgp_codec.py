# qgp_codec.py
"""
Конверт QGP: хэш → подпись Dilithium → сжатие → шифрование одноразовым
QKD-ключом → внешний слой Kyber (KEM + AEAD).

Формат (все целые big-endian):

    magic "QGP1" | version | suite | flags | reserved | key_id[16] |
    kem_ct_len u32 | kem_ct | nonce_outer[12] | nonce_inner[12] |
    body_len u32 | body

Связанные данные AEAD обоих слоёв — все байты до body.
"""
import enum
import hashlib
import logging
import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Union

from pqc_primitives import (
    AEAD_NONCE_BYTES,
    AEAD_TAG_BYTES,
    KYBER768_ENCAPS_SEED_BYTES,
    AuthFailure,
    FormatError,
    HashAlgorithm,
    aead_open,
    aead_seal,
    compress,
    decaps,
    decompress,
    encaps,
    hash_message,
    sign,
    verify,
)
from qkd_channel import SessionKeyMaterial, unpack_bits
from replay_cache import ReplayRegistry, make_replay_tag

log = logging.getLogger(__name__)

MAGIC = b"QGP1"
VERSION = 1
SUITE_SHA3 = 0x01   # SHA3-256, Dilithium3, Kyber768, AES-256-GCM, DEFLATE
SUITE_SHA2 = 0x02   # то же, но хэш SHA2-256
SUITES = {
    SUITE_SHA3: HashAlgorithm.SHA3_256,
    SUITE_SHA2: HashAlgorithm.SHA2_256,
}

KEY_ID_BYTES = 16
MIN_SESSION_KEY_BITS = 256
MAX_MESSAGE_BYTES = 2 ** 32 - 1024

_PREFIX = struct.Struct(">4sBBBB16sI")   # до kem_ct
_SUFFIX = struct.Struct(">12s12sI")      # после kem_ct
_U32 = struct.Struct(">I")

ZERO_KEY_ID = bytes(KEY_ID_BYTES)
ZERO_NONCE = bytes(AEAD_NONCE_BYTES)

NonceSource = Callable[[int], bytes]
KeyLookup = Union[Callable[[bytes], Optional[bytes]], Mapping]


class Layer(enum.IntFlag):
    QKD = 0x01
    KYBER = 0x02


class OpenError(str, enum.Enum):
    BAD_MAGIC = "BadMagic"
    UNSUPPORTED_VERSION = "UnsupportedVersion"
    UNSUPPORTED_SUITE = "UnsupportedSuite"
    MALFORMED_ENVELOPE = "MalformedEnvelope"
    UNKNOWN_KEY_ID = "UnknownKeyId"
    REPLAY_DETECTED = "ReplayDetected"
    OUTER_AUTH_FAIL = "OuterAuthFail"
    INNER_AUTH_FAIL = "InnerAuthFail"
    DECOMPRESS_ERROR = "DecompressError"
    SIGNATURE_INVALID = "SignatureInvalid"


FRAMING_ERRORS = {
    OpenError.BAD_MAGIC,
    OpenError.UNSUPPORTED_VERSION,
    OpenError.UNSUPPORTED_SUITE,
    OpenError.MALFORMED_ENVELOPE,
}


class EnvelopeFormatError(ValueError):
    def __init__(self, error: OpenError, message: str):
        super().__init__(message)
        self.error = error


class CodecUsageError(ValueError):
    """Контекст не соответствует запрошенным слоям или ключ слишком короткий."""


# ===== ТИПЫ =====
@dataclass(frozen=True)
class QgpEnvelope:
    version: int
    suite: int
    flags: int
    reserved: int
    key_id: bytes
    kem_ct: bytes
    nonce_outer: bytes
    nonce_inner: bytes
    body: bytes

    @property
    def layers(self) -> Layer:
        return Layer(self.flags & (Layer.QKD | Layer.KYBER))

    def header_bytes(self, body_len: Optional[int] = None) -> bytes:
        body_len = len(self.body) if body_len is None else body_len
        return (
            _PREFIX.pack(MAGIC, self.version, self.suite, self.flags, self.reserved,
                         self.key_id, len(self.kem_ct))
            + self.kem_ct
            + _SUFFIX.pack(self.nonce_outer, self.nonce_inner, body_len)
        )


@dataclass(frozen=True)
class SealContext:
    signer_secret: bytes
    session_key: Optional[SessionKeyMaterial] = None
    recipient_kem_public: Optional[bytes] = None
    hash_algorithm: HashAlgorithm = HashAlgorithm.SHA3_256


@dataclass(frozen=True)
class OpenOutcome:
    message: Optional[bytes] = None
    error: Optional[OpenError] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def success(cls, message: bytes) -> "OpenOutcome":
        return cls(message=message)

    @classmethod
    def failure(cls, error: OpenError) -> "OpenOutcome":
        return cls(error=error)


class DeterministicNonceSource:
    """Детерминированный источник nonce/seed для золотых векторов и симуляции."""

    def __init__(self, seed: bytes):
        self._seed = bytes(seed)
        self._counter = 0

    def __call__(self, n: int) -> bytes:
        out = hashlib.shake_256(self._seed + self._counter.to_bytes(8, "big")).digest(n)
        self._counter += 1
        return out


# ===== КОДИРОВАНИЕ =====
def encode_envelope(e: QgpEnvelope) -> bytes:
    return e.header_bytes() + e.body


def decode_envelope(data: bytes) -> QgpEnvelope:
    """Строгий разбор: обрезка, лишние байты и несогласованные флаги — ошибки."""
    data = bytes(data)
    head = data[:len(MAGIC)]
    if head != MAGIC[:len(head)]:
        raise EnvelopeFormatError(OpenError.BAD_MAGIC, "неверная сигнатура")
    if len(data) < _PREFIX.size:
        raise EnvelopeFormatError(OpenError.MALFORMED_ENVELOPE, f"конверт обрезан: {len(data)} байт")

    magic, version, suite, flags, reserved, key_id, kem_ct_len = _PREFIX.unpack_from(data, 0)
    if version != VERSION:
        raise EnvelopeFormatError(OpenError.UNSUPPORTED_VERSION, f"версия {version} не поддерживается")
    if suite not in SUITES:
        raise EnvelopeFormatError(OpenError.UNSUPPORTED_SUITE, f"набор 0x{suite:02x} не поддерживается")

    if flags & ~(Layer.QKD | Layer.KYBER) or not flags & (Layer.QKD | Layer.KYBER):
        raise EnvelopeFormatError(OpenError.MALFORMED_ENVELOPE, f"недопустимые флаги 0x{flags:02x}")
    has_qkd = bool(flags & Layer.QKD)
    has_kyber = bool(flags & Layer.KYBER)
    if (kem_ct_len == 0) == has_kyber:
        raise EnvelopeFormatError(OpenError.MALFORMED_ENVELOPE, "kem_ct_len не согласован с флагом Kyber")
    if (key_id == ZERO_KEY_ID) == has_qkd:
        raise EnvelopeFormatError(OpenError.MALFORMED_ENVELOPE, "key_id не согласован с флагом QKD")

    offset = _PREFIX.size
    if len(data) < offset + kem_ct_len + _SUFFIX.size:
        raise EnvelopeFormatError(OpenError.MALFORMED_ENVELOPE, "конверт обрезан внутри заголовка")
    kem_ct = data[offset:offset + kem_ct_len]
    offset += kem_ct_len
    nonce_outer, nonce_inner, body_len = _SUFFIX.unpack_from(data, offset)
    offset += _SUFFIX.size
    if len(data) - offset != body_len:
        raise EnvelopeFormatError(
            OpenError.MALFORMED_ENVELOPE,
            f"body_len={body_len}, а осталось {len(data) - offset} байт",
        )

    return QgpEnvelope(
        version=version,
        suite=suite,
        flags=flags,
        reserved=reserved,
        key_id=key_id,
        kem_ct=kem_ct,
        nonce_outer=nonce_outer,
        nonce_inner=nonce_inner,
        body=data[offset:],
    )


# ===== КЛЮЧИ СЛОЁВ =====
def derive_inner_key(session_key_bytes: bytes) -> bytes:
    return hashlib.sha3_256(session_key_bytes + b"QGP-inner").digest()


def derive_outer_key(shared_secret: bytes) -> bytes:
    return hashlib.sha3_256(shared_secret + b"QGP1-outer").digest()


def suite_for(algorithm: HashAlgorithm) -> int:
    for suite, alg in SUITES.items():
        if alg is HashAlgorithm(algorithm):
            return suite
    raise CodecUsageError(f"нет набора для хэша {algorithm}")


# ===== ЗАПЕЧАТЫВАНИЕ =====
def build_plain(message: bytes, signer_secret: bytes,
                algorithm: HashAlgorithm = HashAlgorithm.SHA3_256) -> bytes:
    """u32(|sig|) ‖ sig ‖ message; подписывается 32-байтовый хэш сообщения."""
    digest = hash_message(message, algorithm)
    sig = sign(signer_secret, digest.value).value
    return _U32.pack(len(sig)) + sig + message


def _resolve_layers(ctx: SealContext, layers: Optional[Layer]) -> Layer:
    present = Layer(0)
    if ctx.session_key is not None:
        present |= Layer.QKD
    if ctx.recipient_kem_public is not None:
        present |= Layer.KYBER
    if layers is None:
        layers = present
    layers = Layer(layers)
    if not layers:
        raise CodecUsageError("нужен хотя бы один слой: QKD или Kyber")
    if layers != present:
        raise CodecUsageError(f"контекст содержит {present!r}, а запрошено {layers!r}")
    return layers


def seal_plain(plain: bytes, ctx: SealContext, nonce_source: NonceSource = os.urandom,
               layers: Optional[Layer] = None) -> bytes:
    """Сжатие, внутренний слой QKD и внешний слой Kyber над готовым plain."""
    layers = _resolve_layers(ctx, layers)
    zipped = compress(plain)

    key_id, nonce_inner, nonce_outer, kem_ct = ZERO_KEY_ID, ZERO_NONCE, ZERO_NONCE, b""
    inner_key = outer_key = None

    if layers & Layer.QKD:
        material = ctx.session_key
        if material.size_bits < MIN_SESSION_KEY_BITS:
            raise CodecUsageError(
                f"сессионный ключ {material.size_bits} бит короче {MIN_SESSION_KEY_BITS}"
            )
        key_id = bytes(material.key_id)
        inner_key = derive_inner_key(material.key_bytes())
        nonce_inner = nonce_source(AEAD_NONCE_BYTES)

    if layers & Layer.KYBER:
        nonce_outer = nonce_source(AEAD_NONCE_BYTES)
        encapsulation = encaps(ctx.recipient_kem_public, nonce_source(KYBER768_ENCAPS_SEED_BYTES))
        kem_ct = encapsulation.ciphertext
        outer_key = derive_outer_key(encapsulation.shared_secret)

    body_len = len(zipped)
    body_len += AEAD_TAG_BYTES if inner_key else 0
    body_len += AEAD_TAG_BYTES if outer_key else 0
    if body_len > 0xFFFFFFFF:
        raise CodecUsageError("тело конверта не помещается в u32")

    envelope = QgpEnvelope(
        version=VERSION,
        suite=suite_for(ctx.hash_algorithm),
        flags=int(layers),
        reserved=0,
        key_id=key_id,
        kem_ct=kem_ct,
        nonce_outer=nonce_outer,
        nonce_inner=nonce_inner,
        body=b"",
    )
    header = envelope.header_bytes(body_len)

    inner = aead_seal(inner_key, nonce_inner, header, zipped) if inner_key else zipped
    body = aead_seal(outer_key, nonce_outer, header, inner) if outer_key else inner
    return encode_envelope(replace(envelope, body=body))


def seal(message: bytes, ctx: SealContext, nonce_source: NonceSource = os.urandom,
         layers: Optional[Layer] = None) -> bytes:
    if len(message) >= MAX_MESSAGE_BYTES:
        raise CodecUsageError(f"сообщение длиннее {MAX_MESSAGE_BYTES} байт")
    _resolve_layers(ctx, layers)
    plain = build_plain(message, ctx.signer_secret, ctx.hash_algorithm)
    return seal_plain(plain, ctx, nonce_source, layers)


# ===== ВСКРЫТИЕ =====
def _lookup(key_lookup: Optional[KeyLookup], key_id: bytes) -> Optional[bytes]:
    if key_lookup is None:
        return None
    if isinstance(key_lookup, Mapping):
        return key_lookup.get(key_id)
    return key_lookup(key_id)


def open_envelope(data: bytes, kem_secret: Optional[bytes], key_lookup: Optional[KeyLookup],
                  verify_key: bytes, replay_registry: ReplayRegistry) -> OpenOutcome:
    """
    Обратный конвейер с фиксированным приоритетом ошибок:
    формат → повтор → key_id → внешний слой → внутренний → распаковка → подпись.
    Любая ошибка возвращается значением.
    """
    try:
        env = decode_envelope(data)
    except EnvelopeFormatError as e:
        log.debug("open: ошибка формата: %s", e)
        return OpenOutcome.failure(e.error)

    has_qkd = bool(env.flags & Layer.QKD)
    has_kyber = bool(env.flags & Layer.KYBER)
    tag = make_replay_tag(has_qkd, env.key_id, env.nonce_outer)
    if replay_registry.seen(tag):
        return OpenOutcome.failure(OpenError.REPLAY_DETECTED)

    session_key = None
    if has_qkd:
        session_key = _lookup(key_lookup, env.key_id)
        if session_key is None:
            return OpenOutcome.failure(OpenError.UNKNOWN_KEY_ID)

    header = env.header_bytes()
    payload = env.body

    if has_kyber:
        if kem_secret is None:
            return OpenOutcome.failure(OpenError.OUTER_AUTH_FAIL)
        shared_secret = decaps(kem_secret, env.kem_ct)
        payload = aead_open(derive_outer_key(shared_secret), env.nonce_outer, header, payload)
        if isinstance(payload, AuthFailure):
            return OpenOutcome.failure(OpenError.OUTER_AUTH_FAIL)

    if has_qkd:
        payload = aead_open(derive_inner_key(session_key), env.nonce_inner, header, payload)
        if isinstance(payload, AuthFailure):
            return OpenOutcome.failure(OpenError.INNER_AUTH_FAIL)

    try:
        plain = decompress(payload)
    except FormatError:
        return OpenOutcome.failure(OpenError.DECOMPRESS_ERROR)

    if len(plain) < _U32.size:
        return OpenOutcome.failure(OpenError.SIGNATURE_INVALID)
    (sig_len,) = _U32.unpack_from(plain, 0)
    if _U32.size + sig_len > len(plain):
        return OpenOutcome.failure(OpenError.SIGNATURE_INVALID)
    sig = plain[_U32.size:_U32.size + sig_len]
    message = plain[_U32.size + sig_len:]

    # Боб сам считает хэш полученного сообщения и сверяет подпись над ним
    digest = hash_message(message, SUITES[env.suite])
    if not verify(verify_key, digest.value, sig):
        return OpenOutcome.failure(OpenError.SIGNATURE_INVALID)

    if not replay_registry.record(tag):
        return OpenOutcome.failure(OpenError.REPLAY_DETECTED)
    return OpenOutcome.success(message)


# ===== ФАЙЛЫ СЕССИОННЫХ КЛЮЧЕЙ =====
def write_session_key_file(path: Union[str, Path], material: SessionKeyMaterial) -> None:
    """Файл ключа: key_id (16 байт) ‖ байты ключа."""
    Path(path).write_bytes(bytes(material.key_id) + material.key_bytes())


def read_session_key_file(path: Union[str, Path]) -> SessionKeyMaterial:
    raw = Path(path).read_bytes()
    if len(raw) <= KEY_ID_BYTES:
        raise CodecUsageError(f"файл ключа {path} слишком короткий")
    key = raw[KEY_ID_BYTES:]
    return SessionKeyMaterial(
        key_id=raw[:KEY_ID_BYTES],
        key_bits=unpack_bits(key, len(key) * 8),
        qber=0.0,
        leaked_bits=0,
    )
