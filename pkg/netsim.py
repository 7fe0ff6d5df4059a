# netsim.py
"""
Стенд TCP/IPQ: два узла (Alice, Bob), слой 0 (квантовый канал + сервис ключей),
кодек QGP и классический канал, в котором может действовать противник.

Всё исполняется в одном процессе и детерминировано seed'ом сценария:
одинаковые ScenarioSpec дают побайтно одинаковые отчёты.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from key_service import KeyPool, material_from_response
from pqc_primitives import kem_keygen, sig_keygen
from qgp_codec import (
    MIN_SESSION_KEY_BITS,
    DeterministicNonceSource,
    Layer,
    SealContext,
    open_envelope,
    seal,
)
from qkd_channel import (
    DEFAULT_QBER_THRESHOLD,
    AbortInsufficientKey,
    AbortQberAlarm,
    ChannelParams,
    InterceptResend,
    ReconcileFailure,
    SessionKeyMaterial,
    run_rounds,
)
from replay_cache import ReplayRegistry
from utils.validators import validate_scenario_data

log = logging.getLogger(__name__)

REPORT_VERSION = 1
ALICE, BOB = "alice", "bob"

# События обнаружения
EVENT_QBER_ALARM = "QBER_ALARM"
EVENT_INSUFFICIENT_KEY = "INSUFFICIENT_KEY"
EVENT_RECONCILE_FAILURE = "RECONCILE_FAILURE"

# Слои стека для layer_trace
LAYER0_EXCHANGE = "layer0_exchange"
LAYER0_ABORT = "layer0_abort"
LAYER0_KEY_FETCH = "layer0_key_fetch"
LAYER0_KEY_REFUSED = "layer0_key_refused"
LAYER0_KEY_LOOKUP = "layer0_key_lookup"
APPLICATION_SIGN = "application_sign"
COMPRESSION = "compression"
QKD_ENCRYPT = "qkd_encrypt"
KYBER_WRAP = "kyber_wrap"
CLASSICAL_TRANSPORT = "classical_transport"
OPEN = "open"

_LAYER_NAMES = {"QKD": Layer.QKD, "Kyber": Layer.KYBER}


class ScenarioError(ValueError):
    pass


# ===== ПРОТИВНИКИ КЛАССИЧЕСКОГО КАНАЛА =====
@dataclass(frozen=True)
class TamperByte:
    """
    Инвертирует младший бит одного байта конверта. Смещение берётся по
    модулю длины кадра: byte_offset за концом конверта попадает на байт
    byte_offset % len(frame).
    """
    message_index: int
    byte_offset: int

    def apply(self, frame: bytes) -> List[bytes]:
        mutated = bytearray(frame)
        mutated[self.byte_offset % len(mutated)] ^= 0x01
        return [bytes(mutated)]


@dataclass(frozen=True)
class ReplayEnvelope:
    message_index: int

    def apply(self, frame: bytes) -> List[bytes]:
        return [frame, frame]


ClassicalAdversary = Optional[Union[TamperByte, ReplayEnvelope]]


# ===== СЦЕНАРИЙ =====
@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    n_pulses: int
    channel: ChannelParams = field(default_factory=ChannelParams)
    qber_threshold: float = DEFAULT_QBER_THRESHOLD
    messages: Tuple[bytes, ...] = ()
    classical_adversary: ClassicalAdversary = None
    layers: Layer = Layer.QKD | Layer.KYBER
    rounds: int = 1
    eve_start_round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(bytes(m) for m in self.messages))
        errors = validate_scenario_data(self.to_dict())
        if errors:
            raise ScenarioError("; ".join(errors))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioSpec":
        errors = validate_scenario_data(data)
        if errors:
            raise ScenarioError("; ".join(errors))

        channel = data.get("channel", {})
        intercept = channel.get("eve_intercept_prob")
        params = ChannelParams(
            noise_flip_prob=channel.get("noise_flip_prob", 0.0),
            loss_prob=channel.get("loss_prob", 0.0),
            eve=InterceptResend(intercept) if intercept is not None else None,
        )

        messages = [
            m.encode("utf-8") if isinstance(m, str) else bytes.fromhex(m["hex"])
            for m in data["messages"]
        ]

        adversary = None
        adv = data.get("classical_adversary")
        if adv is not None:
            if adv["type"] == "tamper_byte":
                adversary = TamperByte(adv["message_index"], adv["byte_offset"])
            else:
                adversary = ReplayEnvelope(adv["message_index"])

        layers = Layer(0)
        for name in data.get("layers", ["QKD", "Kyber"]):
            layers |= _LAYER_NAMES[name]

        return cls(
            seed=data["seed"],
            n_pulses=data["n_pulses"],
            channel=params,
            qber_threshold=data.get("qber_threshold", DEFAULT_QBER_THRESHOLD),
            messages=tuple(messages),
            classical_adversary=adversary,
            layers=layers,
            rounds=data.get("rounds", 1),
            eve_start_round=data.get("eve_start_round", 0),
        )

    def to_dict(self) -> Dict[str, Any]:
        channel = {
            "noise_flip_prob": self.channel.noise_flip_prob,
            "loss_prob": self.channel.loss_prob,
        }
        if self.channel.eve is not None:
            channel["eve_intercept_prob"] = self.channel.eve.intercept_prob

        adversary = None
        if isinstance(self.classical_adversary, TamperByte):
            adversary = {
                "type": "tamper_byte",
                "message_index": self.classical_adversary.message_index,
                "byte_offset": self.classical_adversary.byte_offset,
            }
        elif isinstance(self.classical_adversary, ReplayEnvelope):
            adversary = {
                "type": "replay_envelope",
                "message_index": self.classical_adversary.message_index,
            }

        return {
            "seed": self.seed,
            "n_pulses": self.n_pulses,
            "channel": channel,
            "qber_threshold": self.qber_threshold,
            "messages": [{"hex": m.hex()} for m in self.messages],
            "classical_adversary": adversary,
            "layers": [name for name, flag in _LAYER_NAMES.items() if self.layers & flag],
            "rounds": self.rounds,
            "eve_start_round": self.eve_start_round,
        }


@dataclass
class ScenarioReport:
    seed: int
    qber: Optional[float]
    alarm_triggered: bool
    key_bits_delivered: int
    per_message: List[Dict[str, Any]]
    detection_events: List[str]
    qber_series: List[Optional[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report_version": REPORT_VERSION,
            "seed": self.seed,
            "qber": self.qber,
            "qber_series": list(self.qber_series),
            "alarm_triggered": self.alarm_triggered,
            "key_bits_delivered": self.key_bits_delivered,
            "per_message": [dict(m) for m in self.per_message],
            "detection_events": list(self.detection_events),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioReport":
        if data.get("report_version") != REPORT_VERSION:
            raise ScenarioError(f"неизвестная версия отчёта: {data.get('report_version')}")
        return cls(
            seed=data["seed"],
            qber=data["qber"],
            alarm_triggered=data["alarm_triggered"],
            key_bits_delivered=data["key_bits_delivered"],
            per_message=list(data["per_message"]),
            detection_events=list(data["detection_events"]),
            qber_series=list(data.get("qber_series", [])),
        )


@dataclass(frozen=True)
class LayerTransition:
    message_index: Optional[int]   # None — событие слоя 0 вне сообщений
    layer: str
    detail: str = ""


# ===== ДЕТЕРМИНИРОВАННЫЕ КЛЮЧИ УЗЛОВ =====
def _seed_bytes(seed: int) -> bytes:
    return int(seed).to_bytes(8, "big")


def _endpoint_keys(seed: int):
    signer = sig_keygen(hashlib.sha3_256(b"QGP-sim-signer" + _seed_bytes(seed)).digest())
    kem = kem_keygen(hashlib.shake_256(b"QGP-sim-kem" + _seed_bytes(seed)).digest(64))
    return signer, kem


def _nonce_source(seed: int, index: int) -> DeterministicNonceSource:
    return DeterministicNonceSource(
        hashlib.sha3_256(b"QGP-sim-nonce" + _seed_bytes(seed) + index.to_bytes(4, "big")).digest()
    )


# ===== ИСПОЛНЕНИЕ =====
def _run_layer0(spec: ScenarioSpec, pool: KeyPool, events: List[str],
                trace: Optional[List[LayerTransition]]) -> List[Optional[float]]:
    logs = run_rounds(spec.rounds, spec.n_pulses, spec.channel, spec.qber_threshold,
                      spec.seed, spec.eve_start_round)
    series = []
    for row in logs:
        series.append(row.qber)
        outcome = row.outcome
        if isinstance(outcome, SessionKeyMaterial):
            pool.ingest_split(outcome, MIN_SESSION_KEY_BITS)
            _trace(trace, None, LAYER0_EXCHANGE, f"round={row.round} key_bits={row.key_bits}")
            continue

        if isinstance(outcome, AbortQberAlarm):
            pool.raise_alarm(outcome.qber)
            events.append(EVENT_QBER_ALARM)
        elif isinstance(outcome, ReconcileFailure):
            events.append(EVENT_RECONCILE_FAILURE)
        elif isinstance(outcome, AbortInsufficientKey):
            events.append(EVENT_INSUFFICIENT_KEY)
        _trace(trace, None, LAYER0_ABORT, f"round={row.round} {type(outcome).__name__}")
    return series


def _trace(trace: Optional[List[LayerTransition]], index: Optional[int], layer: str, detail: str = ""):
    if trace is not None:
        trace.append(LayerTransition(index, layer, detail))


def _execute(spec: ScenarioSpec, trace: Optional[List[LayerTransition]] = None) -> ScenarioReport:
    pool = KeyPool()
    registry = ReplayRegistry()
    events: List[str] = []

    series = _run_layer0(spec, pool, events, trace)
    estimated = [q for q in series if q is not None]
    qber = max(estimated) if estimated else None
    alarm = any(q > spec.qber_threshold for q in estimated)

    signer, kem = _endpoint_keys(spec.seed)
    uses_qkd = bool(spec.layers & Layer.QKD)
    uses_kyber = bool(spec.layers & Layer.KYBER)
    key_bits_delivered = 0
    per_message: List[Dict[str, Any]] = []

    for index, message in enumerate(spec.messages):
        session_key = None
        if uses_qkd:
            _trace(trace, index, LAYER0_KEY_FETCH)
            resp = pool.get_key(ALICE, BOB, MIN_SESSION_KEY_BITS)
            if resp["status"] != "ok":
                _trace(trace, index, LAYER0_KEY_REFUSED, resp["code"])
                per_message.append({"index": index, "replay": False, "delivered": False,
                                    "error": resp["code"]})
                events.append(f"message {index}: {resp['code']}")
                continue
            key_bits_delivered += resp["size_bits"]
            session_key = material_from_response(resp)

        ctx = SealContext(
            signer_secret=signer.secret_key,
            session_key=session_key,
            recipient_kem_public=kem.public_key if uses_kyber else None,
        )
        frame = seal(message, ctx, _nonce_source(spec.seed, index))
        _trace(trace, index, APPLICATION_SIGN)
        _trace(trace, index, COMPRESSION)
        if uses_qkd:
            _trace(trace, index, QKD_ENCRYPT, session_key.key_id.hex())
        if uses_kyber:
            _trace(trace, index, KYBER_WRAP)

        frames = [frame]
        adversary = spec.classical_adversary
        if adversary is not None and adversary.message_index == index:
            frames = adversary.apply(frame)

        for copy_no, received in enumerate(frames):
            _trace(trace, index, CLASSICAL_TRANSPORT, f"{len(received)} bytes")

            def lookup(key_id: bytes) -> Optional[bytes]:
                _trace(trace, index, LAYER0_KEY_LOOKUP, key_id.hex())
                got = pool.get_key_by_id(BOB, key_id.hex())
                return material_from_response(got).key_bytes() if got["status"] == "ok" else None

            outcome = open_envelope(received, kem.secret_key, lookup, signer.public_key, registry)
            error = None if outcome.ok else outcome.error.value
            if outcome.ok and outcome.message != message:
                error = "PayloadMismatch"
            _trace(trace, index, OPEN, error or "ok")
            per_message.append({"index": index, "replay": copy_no > 0,
                                "delivered": error is None, "error": error})
            if error is not None:
                events.append(f"message {index}: {error}")

    log.info("сценарий seed=%d: qber=%s, тревога=%s, доставлено %d/%d",
             spec.seed, qber, alarm,
             sum(1 for m in per_message if m["delivered"]), len(per_message))
    return ScenarioReport(
        seed=spec.seed,
        qber=qber,
        alarm_triggered=alarm,
        key_bits_delivered=key_bits_delivered,
        per_message=per_message,
        detection_events=events,
        qber_series=series,
    )


def run_scenario(spec: ScenarioSpec) -> ScenarioReport:
    return _execute(spec)


def replay_attack_check(spec: ScenarioSpec) -> ScenarioReport:
    """Сценарий с повтором конверта: первая копия доставлена, вторая — ReplayDetected."""
    if not isinstance(spec.classical_adversary, ReplayEnvelope):
        log.info("replay_attack_check без противника-повтора: обычный прогон")
    return _execute(spec)


def layer_trace(spec: ScenarioSpec) -> List[LayerTransition]:
    trace: List[LayerTransition] = []
    _execute(spec, trace)
    return trace


# ===== ФАЙЛЫ =====
def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ScenarioError(f"некорректный JSON сценария: {e}") from e
    return ScenarioSpec.from_dict(data)


def write_report(path: Union[str, Path], report: ScenarioReport) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")
