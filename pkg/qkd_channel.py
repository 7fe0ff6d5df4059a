# qkd_channel.py
"""
Симуляция выделенного фотонного канала (BB84, prepare-and-measure):
шум детектора, потери, перехват с переотправкой, просеивание, оценка QBER,
согласование по чётностям и усиление секретности.
"""
import csv
import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.validators import validate_channel_params, validate_threshold

log = logging.getLogger(__name__)

DEFAULT_QBER_THRESHOLD = 0.11
DEFAULT_SAMPLE_FRACTION = 0.5
MIN_KEY_BITS = 128
SAFETY_MARGIN_BITS = 64
MIN_BLOCK, MAX_BLOCK = 8, 1024
KEY_ID_BYTES = 16

ROUND_LOG_HEADER = ["round", "qber", "sifted_bits", "key_bits", "alarm"]

RECONCILE_PASSES = 8

# Потоки случайности внутри одного раунда
_STREAM_PULSES = 0
_STREAM_SAMPLE = 1
_RECONCILE_SHUFFLE = 0x5143   # публичная перестановка, общая для Алисы и Боба


# ===== ОШИБКИ =====
class QkdError(Exception):
    pass


class EmptyInputError(QkdError, ValueError):
    pass


class InsufficientMaterialError(QkdError, ValueError):
    pass


# ===== ТИПЫ =====
class Basis(enum.IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1


@dataclass(frozen=True)
class InterceptResend:
    intercept_prob: float = 1.0


@dataclass(frozen=True)
class ChannelParams:
    noise_flip_prob: float = 0.0
    loss_prob: float = 0.0
    eve: Optional[InterceptResend] = None

    def __post_init__(self):
        intercept = self.eve.intercept_prob if self.eve is not None else None
        errors = validate_channel_params(self.noise_flip_prob, self.loss_prob, intercept)
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def intercept_prob(self) -> float:
        return self.eve.intercept_prob if self.eve is not None else 0.0


@dataclass(frozen=True)
class PulseRecord:
    alice_bit: int
    alice_basis: Basis
    eve_intercepted: bool
    bob_basis: Basis
    bob_bit: Optional[int]   # None — импульс потерян

    @property
    def lost(self) -> bool:
        return self.bob_bit is None


@dataclass
class PulseBatch:
    """Те же записи, но столбцами numpy; bob_bit = -1 у потерянных импульсов."""
    alice_bit: np.ndarray
    alice_basis: np.ndarray
    eve_intercepted: np.ndarray
    bob_basis: np.ndarray
    bob_bit: np.ndarray

    def __len__(self) -> int:
        return int(self.alice_bit.shape[0])

    @property
    def lost(self) -> np.ndarray:
        return self.bob_bit < 0

    def records(self) -> List[PulseRecord]:
        return [
            PulseRecord(
                alice_bit=int(a),
                alice_basis=Basis(int(ab)),
                eve_intercepted=bool(e),
                bob_basis=Basis(int(bb)),
                bob_bit=None if b < 0 else int(b),
            )
            for a, ab, e, bb, b in zip(
                self.alice_bit, self.alice_basis, self.eve_intercepted,
                self.bob_basis, self.bob_bit,
            )
        ]

    @classmethod
    def from_records(cls, pulses: Sequence[PulseRecord]) -> "PulseBatch":
        return cls(
            alice_bit=np.array([p.alice_bit for p in pulses], dtype=np.uint8),
            alice_basis=np.array([int(p.alice_basis) for p in pulses], dtype=np.uint8),
            eve_intercepted=np.array([p.eve_intercepted for p in pulses], dtype=bool),
            bob_basis=np.array([int(p.bob_basis) for p in pulses], dtype=np.uint8),
            bob_bit=np.array([-1 if p.bob_bit is None else p.bob_bit for p in pulses], dtype=np.int8),
        )


@dataclass
class SiftedKey:
    bits: np.ndarray
    source_positions: np.ndarray

    def __len__(self) -> int:
        return int(self.bits.shape[0])


@dataclass
class SessionKeyMaterial:
    key_id: bytes
    key_bits: np.ndarray
    qber: float
    leaked_bits: int
    sifted_bits: int = 0

    @property
    def size_bits(self) -> int:
        return int(self.key_bits.shape[0])

    def key_bytes(self) -> bytes:
        """Биты ключа, упакованные старшим битом вперёд; хвост добивается нулями."""
        return pack_bits(self.key_bits)


@dataclass(frozen=True)
class AbortQberAlarm:
    qber: float
    sifted_bits: int = 0


@dataclass(frozen=True)
class AbortInsufficientKey:
    qber: Optional[float] = None
    sifted_bits: int = 0
    available_bits: int = 0


@dataclass(frozen=True)
class ReconcileFailure:
    leaked_bits: int
    qber: Optional[float] = None
    sifted_bits: int = 0


ExchangeOutcome = Union[SessionKeyMaterial, AbortQberAlarm, AbortInsufficientKey, ReconcileFailure]


@dataclass
class RoundLog:
    round: int
    qber: Optional[float]
    sifted_bits: int
    key_bits: int
    alarm: bool
    n_pulses: int
    outcome: ExchangeOutcome = field(repr=False)

    @property
    def key_rate(self) -> float:
        return self.key_bits / self.n_pulses if self.n_pulses else 0.0

    def as_row(self) -> dict:
        return {
            "round": self.round,
            "qber": "" if self.qber is None else f"{self.qber:.6f}",
            "sifted_bits": self.sifted_bits,
            "key_bits": self.key_bits,
            "alarm": str(self.alarm).lower(),
        }


# ===== ВСПОМОГАТЕЛЬНЫЕ ФУНКЦИИ =====
def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, size_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:size_bits].astype(np.uint8)


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def expected_qber(noise_flip_prob: float, intercept_prob: float) -> float:
    """Аналитический QBER: ошибка Евы q/4, затем шум детектора p."""
    return noise_flip_prob * (1 - intercept_prob / 2) + intercept_prob / 4


def _block_size(qber: float, n: int) -> int:
    if qber <= 0:
        return max(n, 1)
    return min(max(math.ceil(0.73 / qber), MIN_BLOCK), MAX_BLOCK)


def _parity(bits: np.ndarray) -> int:
    return int(np.bitwise_xor.reduce(bits)) if bits.size else 0


# ===== ФОТОННЫЙ КАНАЛ =====
def simulate_pulses(n_pulses: int, params: ChannelParams, rng_seed) -> PulseBatch:
    """
    Векторная версия обмена импульсами. Все случайные величины тянутся
    в фиксированном порядке независимо от параметров, поэтому результат
    зависит только от (n_pulses, params, rng_seed).
    """
    if n_pulses < 1:
        raise EmptyInputError("n_pulses должно быть >= 1")

    rng = np.random.default_rng([int(rng_seed), _STREAM_PULSES])
    alice_bit = rng.integers(0, 2, n_pulses, dtype=np.uint8)
    alice_basis = rng.integers(0, 2, n_pulses, dtype=np.uint8)
    eve_draw = rng.random(n_pulses)
    eve_basis = rng.integers(0, 2, n_pulses, dtype=np.uint8)
    eve_guess = rng.integers(0, 2, n_pulses, dtype=np.uint8)
    loss_draw = rng.random(n_pulses)
    bob_basis = rng.integers(0, 2, n_pulses, dtype=np.uint8)
    bob_guess = rng.integers(0, 2, n_pulses, dtype=np.uint8)
    noise_draw = rng.random(n_pulses)

    # Ева меряет в своём базисе и переотправляет результат в нём же
    intercepted = eve_draw < params.intercept_prob
    eve_bit = np.where(eve_basis == alice_basis, alice_bit, eve_guess)
    incoming_bit = np.where(intercepted, eve_bit, alice_bit)
    incoming_basis = np.where(intercepted, eve_basis, alice_basis)

    measured = np.where(bob_basis == incoming_basis, incoming_bit, bob_guess)
    flipped = noise_draw < params.noise_flip_prob
    measured = measured ^ flipped.astype(np.uint8)

    lost = loss_draw < params.loss_prob
    bob_bit = np.where(lost, -1, measured).astype(np.int8)

    return PulseBatch(
        alice_bit=alice_bit,
        alice_basis=alice_basis,
        eve_intercepted=intercepted,
        bob_basis=bob_basis,
        bob_bit=bob_bit,
    )


def exchange_pulses(n_pulses: int, params: ChannelParams, rng_seed) -> List[PulseRecord]:
    return simulate_pulses(n_pulses, params, rng_seed).records()


def sift(pulses: Union[PulseBatch, Sequence[PulseRecord]]) -> Tuple[SiftedKey, SiftedKey]:
    """Оставляем только не потерянные позиции с совпавшими базисами."""
    batch = pulses if isinstance(pulses, PulseBatch) else PulseBatch.from_records(pulses)
    if len(batch) == 0:
        empty = np.zeros(0, dtype=np.uint8)
        positions = np.zeros(0, dtype=np.int64)
        return SiftedKey(empty, positions), SiftedKey(empty.copy(), positions.copy())

    keep = (batch.alice_basis == batch.bob_basis) & ~batch.lost
    positions = np.flatnonzero(keep)
    alice = SiftedKey(bits=batch.alice_bit[positions].astype(np.uint8), source_positions=positions)
    bob = SiftedKey(bits=batch.bob_bit[positions].astype(np.uint8), source_positions=positions.copy())
    return alice, bob


def estimate_qber(alice_sifted: SiftedKey, bob_sifted: SiftedKey, sample_fraction: float,
                  rng_seed) -> Tuple[float, SiftedKey, SiftedKey]:
    """Сравниваем и выбрасываем случайную выборку ⌈f·n⌉ позиций."""
    n = len(alice_sifted)
    if n == 0 or len(bob_sifted) != n:
        raise InsufficientMaterialError("просеянные ключи пусты или не выровнены")
    if not 0 < sample_fraction < 1:
        raise ValueError(f"sample_fraction должно лежать в (0, 1), получено {sample_fraction}")

    k = math.ceil(sample_fraction * n)
    if k >= n:
        raise InsufficientMaterialError(f"выборка {k} съела бы все {n} бит")

    rng = np.random.default_rng([int(rng_seed), _STREAM_SAMPLE])
    sample = rng.choice(n, size=k, replace=False)
    mismatches = int(np.count_nonzero(alice_sifted.bits[sample] != bob_sifted.bits[sample]))
    qber = mismatches / k

    keep = np.ones(n, dtype=bool)
    keep[sample] = False
    remaining_alice = SiftedKey(alice_sifted.bits[keep], alice_sifted.source_positions[keep])
    remaining_bob = SiftedKey(bob_sifted.bits[keep], bob_sifted.source_positions[keep])
    return qber, remaining_alice, remaining_bob


def _binary_pass(alice: np.ndarray, bob: np.ndarray, block: int) -> int:
    """Чётность каждого блока, при расхождении бинарный поиск одной ошибки. bob правится на месте."""
    n = alice.shape[0]
    leaked = 0
    for start in range(0, n, block):
        end = min(start + block, n)
        leaked += 1
        if _parity(alice[start:end]) == _parity(bob[start:end]):
            continue
        lo, hi = start, end
        while hi - lo > 1:
            mid = (lo + hi) // 2
            leaked += 1
            if _parity(alice[lo:mid]) != _parity(bob[lo:mid]):
                hi = mid
            else:
                lo = mid
        bob[lo] ^= 1
    return leaked


def _key_digest(bits: np.ndarray) -> bytes:
    return hashlib.sha3_256(pack_bits(bits)).digest()


def reconcile(alice_remaining: Union[SiftedKey, np.ndarray], bob_remaining: Union[SiftedKey, np.ndarray],
              qber: float, passes: int = 1) -> Union[Tuple[np.ndarray, int], ReconcileFailure]:
    """
    Согласование по чётностям: проход по блокам с бинарным поиском одной
    ошибки, после каждого прохода сравниваем SHA3-256 ключей.
    Проходы после первого идут по публичной перестановке позиций,
    чтобы разбить пары ошибок, оставшиеся в одном блоке.
    """
    alice = np.asarray(getattr(alice_remaining, "bits", alice_remaining), dtype=np.uint8)
    bob = np.array(getattr(bob_remaining, "bits", bob_remaining), dtype=np.uint8, copy=True)
    n = alice.shape[0]
    block = _block_size(qber, n)
    leaked = 0
    target = _key_digest(alice)

    for p in range(max(passes, 1)):
        if p == 0:
            leaked += _binary_pass(alice, bob, block)
        else:
            order = np.random.default_rng([_RECONCILE_SHUFFLE, p]).permutation(n)
            shuffled = bob[order]
            leaked += _binary_pass(alice[order], shuffled, block)
            bob[order] = shuffled
        if _key_digest(bob) == target:
            return bob, leaked

    log.info("согласование не сошлось за %d проход(ов): остались блоки с чётным числом ошибок", passes)
    return ReconcileFailure(leaked_bits=leaked, qber=qber)


def secret_key_length(n: int, qber: float, leaked_bits: int) -> int:
    return math.floor(n * (1 - 2 * binary_entropy(qber))) - leaked_bits - SAFETY_MARGIN_BITS


def privacy_amplify(corrected_key: np.ndarray, qber: float, leaked_bits: int,
                    amp_seed: bytes) -> Union[SessionKeyMaterial, AbortInsufficientKey]:
    """Сжатие согласованного ключа через SHAKE-256 с затравкой amp_seed."""
    if len(amp_seed) != 32:
        raise ValueError("amp_seed должен быть 32 байта")

    corrected_key = np.asarray(corrected_key, dtype=np.uint8)
    n = int(corrected_key.shape[0])
    length = secret_key_length(n, qber, leaked_bits)
    if length < MIN_KEY_BITS:
        return AbortInsufficientKey(qber=qber, available_bits=max(length, 0))

    stream = hashlib.shake_256(amp_seed + pack_bits(corrected_key)).digest(math.ceil(length / 8))
    key_bits = unpack_bits(stream, length)
    key_id = hashlib.sha3_256(amp_seed + b"QGP-keyid").digest()[:KEY_ID_BYTES]
    return SessionKeyMaterial(key_id=key_id, key_bits=key_bits, qber=qber, leaked_bits=leaked_bits)


def _amp_seed(rng_seed) -> bytes:
    return hashlib.sha3_256(b"QGP-amp" + int(rng_seed).to_bytes(16, "big", signed=True)).digest()


def run_exchange(n_pulses: int, params: ChannelParams,
                 qber_threshold: float = DEFAULT_QBER_THRESHOLD, rng_seed=0,
                 sample_fraction: float = DEFAULT_SAMPLE_FRACTION) -> ExchangeOutcome:
    """Генерация → просеивание → оценка QBER → тревога или дистилляция ключа."""
    errors = validate_threshold(qber_threshold)
    if errors:
        raise ValueError("; ".join(errors))

    alice, bob = sift(simulate_pulses(n_pulses, params, rng_seed))
    sifted_bits = len(alice)
    try:
        qber, alice_rest, bob_rest = estimate_qber(alice, bob, sample_fraction, rng_seed)
    except InsufficientMaterialError as e:
        log.info("раунд %s: мало материала после просеивания (%s)", rng_seed, e)
        return AbortInsufficientKey(sifted_bits=sifted_bits)

    if qber > qber_threshold:
        log.warning("раунд %s: QBER %.4f выше порога %.4f — тревога", rng_seed, qber, qber_threshold)
        return AbortQberAlarm(qber=qber, sifted_bits=sifted_bits)

    result = reconcile(alice_rest, bob_rest, qber, passes=RECONCILE_PASSES)
    if isinstance(result, ReconcileFailure):
        return ReconcileFailure(leaked_bits=result.leaked_bits, qber=qber, sifted_bits=sifted_bits)

    corrected, leaked = result
    material = privacy_amplify(corrected, qber, leaked, _amp_seed(rng_seed))
    if isinstance(material, AbortInsufficientKey):
        return AbortInsufficientKey(qber=qber, sifted_bits=sifted_bits,
                                    available_bits=material.available_bits)
    material.sifted_bits = sifted_bits
    return material


def round_seed(seed: int, round_index: int) -> int:
    digest = hashlib.sha3_256(f"QGP-round:{seed}:{round_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_rounds(rounds: int, n_pulses: int, params: ChannelParams,
               qber_threshold: float = DEFAULT_QBER_THRESHOLD, rng_seed: int = 0,
               eve_start_round: int = 0,
               sample_fraction: float = DEFAULT_SAMPLE_FRACTION) -> List[RoundLog]:
    """
    Серия раундов. Ева (если задана в params) включается с раунда
    eve_start_round — так видно скачок QBER в момент атаки.
    """
    quiet = ChannelParams(noise_flip_prob=params.noise_flip_prob, loss_prob=params.loss_prob)
    logs: List[RoundLog] = []
    for r in range(rounds):
        channel = params if r >= eve_start_round else quiet
        outcome = run_exchange(n_pulses, channel, qber_threshold, round_seed(rng_seed, r), sample_fraction)
        logs.append(RoundLog(
            round=r,
            qber=outcome.qber,
            sifted_bits=outcome.sifted_bits,
            key_bits=outcome.size_bits if isinstance(outcome, SessionKeyMaterial) else 0,
            alarm=isinstance(outcome, AbortQberAlarm),
            n_pulses=n_pulses,
            outcome=outcome,
        ))
    return logs


def write_round_log(path: Union[str, Path], rows: Sequence[RoundLog]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=ROUND_LOG_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_row())
