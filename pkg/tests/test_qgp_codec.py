# tests/test_qgp_codec.py
import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
import struct

import numpy as np
import pytest

from pqc_primitives import HashAlgorithm, aead_seal, hash_message, kem_keygen, sig_keygen, verify
from qgp_codec import (
    MAGIC,
    SUITE_SHA2,
    SUITE_SHA3,
    ZERO_KEY_ID,
    ZERO_NONCE,
    CodecUsageError,
    DeterministicNonceSource,
    EnvelopeFormatError,
    Layer,
    OpenError,
    QgpEnvelope,
    SealContext,
    build_plain,
    decode_envelope,
    derive_inner_key,
    encode_envelope,
    open_envelope,
    read_session_key_file,
    seal,
    seal_plain,
    write_session_key_file,
)
from qkd_channel import SessionKeyMaterial
from replay_cache import ReplayRegistry

MESSAGE = b"QGP: transfer 100 units to account 42"
KYBER_MUTATION_SAMPLES = 24
RANDOM_ROUNDTRIPS = 1000
MAX_RANDOM_MESSAGE = 64 * 1024
RANDOM_ENVELOPES = 1000


def make_material(seed: int, size_bits: int = 256) -> SessionKeyMaterial:
    rng = np.random.default_rng(seed)
    return SessionKeyMaterial(
        key_id=rng.bytes(16),
        key_bits=rng.integers(0, 2, size_bits, dtype=np.uint8),
        qber=0.02,
        leaked_bits=0,
    )


@pytest.fixture(scope="module")
def signer():
    return sig_keygen(bytes(32))


@pytest.fixture(scope="module")
def kem():
    return kem_keygen(bytes(64))


@pytest.fixture(scope="module")
def material():
    return make_material(1)


@pytest.fixture(scope="module")
def lookup(material):
    return {material.key_id: material.key_bytes()}


@pytest.fixture(scope="module")
def hybrid_envelope(signer, kem, material):
    ctx = SealContext(signer.secret_key, session_key=material, recipient_kem_public=kem.public_key)
    return seal(MESSAGE, ctx, DeterministicNonceSource(b"hybrid"))


@pytest.fixture(scope="module")
def qkd_envelope(signer, material):
    ctx = SealContext(signer.secret_key, session_key=material)
    return seal(MESSAGE, ctx, DeterministicNonceSource(b"qkd"))


@pytest.fixture(scope="module")
def kyber_envelope(signer, kem):
    ctx = SealContext(signer.secret_key, recipient_kem_public=kem.public_key)
    return seal(MESSAGE, ctx, DeterministicNonceSource(b"kyber"))


def open_fresh(data, signer, kem, lookup, kem_secret=...):
    secret = kem.secret_key if kem_secret is ... else kem_secret
    return open_envelope(data, secret, lookup, signer.public_key, ReplayRegistry())


# ===== ЗАПЕЧАТЫВАНИЕ И ВСКРЫТИЕ =====

@pytest.mark.parametrize("name", ["hybrid_envelope", "qkd_envelope", "kyber_envelope"])
def test_roundtrip_all_layer_combinations(name, request, signer, kem, lookup):
    data = request.getfixturevalue(name)
    outcome = open_fresh(data, signer, kem, lookup)
    assert outcome.ok
    assert outcome.message == MESSAGE


def test_envelope_header_fields(hybrid_envelope, qkd_envelope, kyber_envelope, material):
    env = decode_envelope(hybrid_envelope)
    assert hybrid_envelope[:4] == MAGIC
    assert env.layers == Layer.QKD | Layer.KYBER
    assert env.suite == SUITE_SHA3
    assert env.key_id == material.key_id
    assert len(env.kem_ct) == 1088

    env = decode_envelope(qkd_envelope)
    assert env.layers == Layer.QKD
    assert env.kem_ct == b""
    assert env.nonce_outer == ZERO_NONCE

    env = decode_envelope(kyber_envelope)
    assert env.layers == Layer.KYBER
    assert env.key_id == ZERO_KEY_ID
    assert env.nonce_inner == ZERO_NONCE


def test_encode_decode_preserves_bytes(hybrid_envelope):
    assert encode_envelope(decode_envelope(hybrid_envelope)) == hybrid_envelope


@pytest.mark.slow
@pytest.mark.parametrize("layers, seed", [
    (Layer.QKD | Layer.KYBER, 11),
    (Layer.QKD, 12),
    (Layer.KYBER, 13),
])
def test_roundtrip_random_messages(layers, seed, signer, kem, lookup, material):
    rng = np.random.default_rng(seed)
    ctx = SealContext(
        signer.secret_key,
        session_key=material if layers & Layer.QKD else None,
        recipient_kem_public=kem.public_key if layers & Layer.KYBER else None,
    )
    nonces = DeterministicNonceSource(seed.to_bytes(4, "big"))
    for i in range(RANDOM_ROUNDTRIPS // 3 + 1):
        msg = rng.bytes(int(rng.integers(0, MAX_RANDOM_MESSAGE + 1)))
        outcome = open_fresh(seal(msg, ctx, nonces), signer, kem, lookup)
        assert outcome.ok, (i, outcome.error)
        assert outcome.message == msg


def random_envelope(rng) -> QgpEnvelope:
    layers = [Layer.QKD, Layer.KYBER, Layer.QKD | Layer.KYBER][int(rng.integers(0, 3))]
    key_id = ZERO_KEY_ID
    if layers & Layer.QKD:
        while key_id == ZERO_KEY_ID:
            key_id = rng.bytes(16)
    kem_ct = rng.bytes(int(rng.integers(1, 2000))) if layers & Layer.KYBER else b""
    return QgpEnvelope(
        version=1,
        suite=[SUITE_SHA3, SUITE_SHA2][int(rng.integers(0, 2))],
        flags=int(layers),
        reserved=int(rng.integers(0, 256)),
        key_id=key_id,
        kem_ct=kem_ct,
        nonce_outer=rng.bytes(12),
        nonce_inner=rng.bytes(12),
        body=rng.bytes(int(rng.integers(0, 600))),
    )


def test_encode_decode_is_bijection_on_random_envelopes():
    rng = np.random.default_rng(14)
    for i in range(RANDOM_ENVELOPES):
        env = random_envelope(rng)
        data = encode_envelope(env)
        assert decode_envelope(data) == env, i
        assert encode_envelope(decode_envelope(data)) == data


def test_empty_message_roundtrip(signer, kem, lookup, material):
    ctx = SealContext(signer.secret_key, session_key=material, recipient_kem_public=kem.public_key)
    data = seal(b"", ctx, DeterministicNonceSource(b"empty"))
    outcome = open_fresh(data, signer, kem, lookup)
    assert outcome.ok
    assert outcome.message == b""


def test_signature_covers_message_digest(signer):
    plain = build_plain(MESSAGE, signer.secret_key)
    (sig_len,) = struct.unpack(">I", plain[:4])
    sig = plain[4:4 + sig_len]
    assert plain[4 + sig_len:] == MESSAGE
    assert verify(signer.public_key, hash_message(MESSAGE).value, sig)


def test_sha2_suite_roundtrip(signer, kem, lookup, material):
    ctx = SealContext(signer.secret_key, session_key=material,
                      hash_algorithm=HashAlgorithm.SHA2_256)
    data = seal(MESSAGE, ctx, DeterministicNonceSource(b"sha2"))
    assert decode_envelope(data).suite == SUITE_SHA2
    assert open_fresh(data, signer, kem, lookup).message == MESSAGE


def test_deterministic_nonce_source_gives_identical_envelopes(signer, kem, material):
    ctx = SealContext(signer.secret_key, session_key=material, recipient_kem_public=kem.public_key)
    a = seal(MESSAGE, ctx, DeterministicNonceSource(b"golden"))
    b = seal(MESSAGE, ctx, DeterministicNonceSource(b"golden"))
    c = seal(MESSAGE, ctx, DeterministicNonceSource(b"other"))
    assert a == b
    assert a != c


def test_random_nonces_differ(signer, material):
    ctx = SealContext(signer.secret_key, session_key=material)
    a, b = seal(MESSAGE, ctx), seal(MESSAGE, ctx)
    assert decode_envelope(a).nonce_inner != decode_envelope(b).nonce_inner


# ===== ОШИБКИ ФОРМАТА =====

def _patched(data: bytes, offset: int, value: int) -> bytes:
    out = bytearray(data)
    out[offset] = value
    return bytes(out)


@pytest.mark.parametrize("mutate, expected", [
    (lambda d: b"XYZ" + d[3:], OpenError.BAD_MAGIC),
    (lambda d: b"XYZ", OpenError.BAD_MAGIC),
    (lambda d: b"QGP", OpenError.MALFORMED_ENVELOPE),
    (lambda d: b"", OpenError.MALFORMED_ENVELOPE),
    (lambda d: _patched(d, 4, 2), OpenError.UNSUPPORTED_VERSION),
    (lambda d: _patched(d, 5, 9), OpenError.UNSUPPORTED_SUITE),
    (lambda d: _patched(d, 6, 0), OpenError.MALFORMED_ENVELOPE),
    (lambda d: _patched(d, 6, 0x07), OpenError.MALFORMED_ENVELOPE),
    (lambda d: _patched(d, 6, 0x03), OpenError.MALFORMED_ENVELOPE),
    (lambda d: d[:-1], OpenError.MALFORMED_ENVELOPE),
    (lambda d: d[:40], OpenError.MALFORMED_ENVELOPE),
    (lambda d: d + b"\x00", OpenError.MALFORMED_ENVELOPE),
])
def test_framing_errors(mutate, expected, qkd_envelope, signer, kem, lookup):
    data = mutate(qkd_envelope)
    with pytest.raises(EnvelopeFormatError) as exc:
        decode_envelope(data)
    assert exc.value.error is expected
    assert open_fresh(data, signer, kem, lookup).error is expected


def test_every_single_bit_flip_is_rejected(qkd_envelope, signer, kem, lookup):
    registry = ReplayRegistry()
    for pos in range(len(qkd_envelope)):
        bad = bytearray(qkd_envelope)
        bad[pos] ^= 0x01
        outcome = open_envelope(bytes(bad), kem.secret_key, lookup, signer.public_key, registry)
        assert not outcome.ok, f"байт {pos}"
    assert len(registry) == 0


def test_sampled_bit_flips_in_kyber_envelope_are_rejected(hybrid_envelope, signer, kem, lookup):
    rng = np.random.default_rng(5)
    positions = rng.choice(len(hybrid_envelope), KYBER_MUTATION_SAMPLES, replace=False)
    for pos in positions:
        bad = bytearray(hybrid_envelope)
        bad[pos] ^= 1 << int(rng.integers(0, 8))
        outcome = open_fresh(bytes(bad), signer, kem, lookup)
        assert not outcome.ok, f"байт {pos}"


def test_kem_ciphertext_flip_is_outer_auth_fail(hybrid_envelope, signer, kem, lookup):
    # kem_ct начинается сразу за фиксированным префиксом (4+4+16+4 байта)
    bad = bytearray(hybrid_envelope)
    bad[28 + 100] ^= 0x01
    assert open_fresh(bytes(bad), signer, kem, lookup).error is OpenError.OUTER_AUTH_FAIL


# ===== ОШИБКИ ВСКРЫТИЯ =====

def test_replay_detected(hybrid_envelope, signer, kem, lookup):
    registry = ReplayRegistry()
    first = open_envelope(hybrid_envelope, kem.secret_key, lookup, signer.public_key, registry)
    second = open_envelope(hybrid_envelope, kem.secret_key, lookup, signer.public_key, registry)
    assert first.ok
    assert second.error is OpenError.REPLAY_DETECTED


def test_replay_detected_without_qkd_layer(kyber_envelope, signer, kem):
    registry = ReplayRegistry()
    assert open_envelope(kyber_envelope, kem.secret_key, None, signer.public_key, registry).ok
    again = open_envelope(kyber_envelope, kem.secret_key, None, signer.public_key, registry)
    assert again.error is OpenError.REPLAY_DETECTED


def test_replay_takes_precedence_over_unknown_key(qkd_envelope, signer, kem, lookup):
    registry = ReplayRegistry()
    assert open_envelope(qkd_envelope, None, lookup, signer.public_key, registry).ok
    again = open_envelope(qkd_envelope, None, {}, signer.public_key, registry)
    assert again.error is OpenError.REPLAY_DETECTED


def test_unknown_key_id(hybrid_envelope, signer, kem):
    assert open_fresh(hybrid_envelope, signer, kem, {}).error is OpenError.UNKNOWN_KEY_ID
    assert open_fresh(hybrid_envelope, signer, kem, lambda key_id: None).error is OpenError.UNKNOWN_KEY_ID
    assert open_fresh(hybrid_envelope, signer, kem, None).error is OpenError.UNKNOWN_KEY_ID


def test_unknown_key_id_takes_precedence_over_outer_auth(hybrid_envelope, signer, kem):
    outcome = open_fresh(hybrid_envelope, signer, kem, {}, kem_secret=None)
    assert outcome.error is OpenError.UNKNOWN_KEY_ID


def test_outer_auth_fail_without_or_with_wrong_kem_key(hybrid_envelope, signer, kem, lookup):
    assert open_fresh(hybrid_envelope, signer, kem, lookup, kem_secret=None).error is OpenError.OUTER_AUTH_FAIL
    wrong = kem_keygen(b"\x01" * 64)
    outcome = open_fresh(hybrid_envelope, signer, kem, lookup, kem_secret=wrong.secret_key)
    assert outcome.error is OpenError.OUTER_AUTH_FAIL


def test_inner_auth_fail_with_wrong_session_key(hybrid_envelope, signer, kem, material):
    wrong = {material.key_id: make_material(2).key_bytes()}
    assert open_fresh(hybrid_envelope, signer, kem, wrong).error is OpenError.INNER_AUTH_FAIL


def test_failed_open_does_not_record(hybrid_envelope, signer, kem, lookup, material):
    registry = ReplayRegistry()
    wrong = {material.key_id: make_material(2).key_bytes()}
    failed = open_envelope(hybrid_envelope, kem.secret_key, wrong, signer.public_key, registry)
    assert failed.error is OpenError.INNER_AUTH_FAIL
    assert len(registry) == 0
    assert open_envelope(hybrid_envelope, kem.secret_key, lookup, signer.public_key, registry).ok


def test_decompress_error(signer, kem, material):
    garbage = b"\xff\xff\xff\xff not deflate"
    env = QgpEnvelope(
        version=1, suite=SUITE_SHA3, flags=int(Layer.QKD), reserved=0,
        key_id=material.key_id, kem_ct=b"", nonce_outer=ZERO_NONCE,
        nonce_inner=b"\x07" * 12, body=b"",
    )
    header = env.header_bytes(len(garbage) + 16)
    body = aead_seal(derive_inner_key(material.key_bytes()), env.nonce_inner, header, garbage)
    data = header + body
    lookup = {material.key_id: material.key_bytes()}
    assert open_fresh(data, signer, kem, lookup).error is OpenError.DECOMPRESS_ERROR


def test_signature_invalid_with_foreign_verify_key(qkd_envelope, kem, lookup):
    other = sig_keygen(b"\x02" * 32)
    outcome = open_envelope(qkd_envelope, kem.secret_key, lookup, other.public_key, ReplayRegistry())
    assert outcome.error is OpenError.SIGNATURE_INVALID


def test_signature_invalid_on_altered_message_with_original_signature(signer, kem, lookup, material):
    plain = bytearray(build_plain(MESSAGE, signer.secret_key))
    plain[-1] ^= 0x01
    ctx = SealContext(signer.secret_key, session_key=material, recipient_kem_public=kem.public_key)
    data = seal_plain(bytes(plain), ctx, DeterministicNonceSource(b"forged"))
    assert open_fresh(data, signer, kem, lookup).error is OpenError.SIGNATURE_INVALID


def test_signature_invalid_on_bad_signature_length(signer, kem, lookup, material):
    ctx = SealContext(signer.secret_key, session_key=material)
    plain = struct.pack(">I", 9999) + b"short"
    data = seal_plain(plain, ctx, DeterministicNonceSource(b"siglen"))
    assert open_fresh(data, signer, kem, lookup).error is OpenError.SIGNATURE_INVALID

    data = seal_plain(b"\x00", ctx, DeterministicNonceSource(b"tiny"))
    assert open_fresh(data, signer, kem, lookup).error is OpenError.SIGNATURE_INVALID


# ===== ОШИБКИ ИСПОЛЬЗОВАНИЯ =====

def test_seal_requires_a_layer(signer):
    with pytest.raises(CodecUsageError):
        seal(MESSAGE, SealContext(signer.secret_key))


def test_seal_layers_must_match_context(signer, material):
    ctx = SealContext(signer.secret_key, session_key=material)
    with pytest.raises(CodecUsageError):
        seal(MESSAGE, ctx, layers=Layer.KYBER)
    with pytest.raises(CodecUsageError):
        seal(MESSAGE, ctx, layers=Layer.QKD | Layer.KYBER)


def test_seal_rejects_short_session_key(signer):
    ctx = SealContext(signer.secret_key, session_key=make_material(3, size_bits=128))
    with pytest.raises(CodecUsageError):
        seal(MESSAGE, ctx)


# ===== ФАЙЛЫ КЛЮЧЕЙ =====

def test_session_key_file_roundtrip(tmp_path, material):
    path = tmp_path / "session.key"
    write_session_key_file(path, material)
    assert path.stat().st_size == 16 + 32
    loaded = read_session_key_file(path)
    assert loaded.key_id == material.key_id
    assert loaded.key_bytes() == material.key_bytes()
    assert loaded.size_bits == 256


def test_session_key_file_too_short(tmp_path):
    path = tmp_path / "bad.key"
    path.write_bytes(bytes(16))
    with pytest.raises(CodecUsageError):
        read_session_key_file(path)
