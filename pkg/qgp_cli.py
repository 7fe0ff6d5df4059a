#!/usr/bin/env python
import argparse
import asyncio
import enum
import hashlib
import json
import logging
import math
import os
import sys
import threading
from pathlib import Path

import requests

import config
from key_service import KeyPool, KeyServiceClient, KeyServiceServer, material_from_response, parse_address
from netsim import ReplayEnvelope, ScenarioError, layer_trace, load_scenario, replay_attack_check, run_scenario, write_report
from pqc_primitives import HashAlgorithm, kem_keygen, sig_keygen
from qgp_codec import (
    CodecUsageError,
    DeterministicNonceSource,
    SealContext,
    open_envelope,
    read_session_key_file,
    seal,
    write_session_key_file,
)
from qkd_channel import (
    AbortQberAlarm,
    ChannelParams,
    InterceptResend,
    SessionKeyMaterial,
    run_rounds,
    write_round_log,
)
from replay_cache import ReplayRegistry
from shor_demo import (
    FactorPair,
    OrderFindingConfig,
    ShorError,
    apply_qft_argument,
    argument_distribution,
    build_order_state,
    default_t,
    mod_exp,
    run_order_finding,
    shor_factor,
    write_histogram,
)

log = logging.getLogger("qgp_cli")

# Базовый URL HTTP-мониторинга по умолчанию (переопределяется через --url)
BASE_URL = "http://localhost:5000"


class ExitStatus(enum.IntEnum):
    OK = 0
    AUTH_FAILURE = 1     # проверка подписи / AEAD / формат конверта
    ALARM = 2            # тревога QBER или нехватка ключа
    USAGE = 3            # неверные аргументы или входные данные


class QgpArgumentParser(argparse.ArgumentParser):
    """Ошибки разбора аргументов завершаются кодом 3, а не 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {self.prog}: {message}", file=sys.stderr)
        raise SystemExit(ExitStatus.USAGE)


# === ХЕЛПЕРЫ ===

def print_json(obj):
    print(json.dumps(obj, ensure_ascii=False, indent=2))


def fail(message: str, status: ExitStatus) -> ExitStatus:
    print(f"❌ {message}", file=sys.stderr)
    return status


def read_file(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ValueError(f"не удалось прочитать {path}: {e.strerror}") from e


def parse_hex_seed(value: str) -> bytes:
    try:
        seed = bytes.fromhex(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed должен быть в hex, получено {value!r}")
    if len(seed) not in (32, 64):
        raise argparse.ArgumentTypeError(f"seed должен быть 32 или 64 байта, получено {len(seed)}")
    return seed


def api_request(method: str, path: str, *, json_data=None, params=None):
    """
    Вызов HTTP-мониторинга сервиса ключей.
    При resp.ok == False печатает ошибку и завершает процесс с кодом 3.
    """
    url = BASE_URL.rstrip("/") + path
    headers = {}
    if json_data is not None:
        headers["Content-Type"] = "application/json"

    try:
        resp = requests.request(method, url, headers=headers, json=json_data, params=params, timeout=10)
    except requests.RequestException as e:
        print(f"❌ Сервис недоступен: {e}", file=sys.stderr)
        sys.exit(ExitStatus.USAGE)

    try:
        data = resp.json()
    except ValueError:
        data = {"raw": resp.text}

    if not resp.ok:
        msg = data.get("error") or data.get("code") or data.get("message") or f"HTTP {resp.status_code}"
        print(f"❌ Ошибка ({resp.status_code}): {msg}", file=sys.stderr)
        details = data.get("details")
        if details:
            print("  Детали:", file=sys.stderr)
            for d in details if isinstance(details, list) else [details]:
                print("   -", d, file=sys.stderr)
        sys.exit(ExitStatus.USAGE)

    return data


def _channel_from_args(args) -> ChannelParams:
    eve = InterceptResend(args.eve) if args.eve else None
    return ChannelParams(noise_flip_prob=args.noise, loss_prob=args.loss, eve=eve)


def _threshold(args) -> float:
    return args.threshold if args.threshold is not None else args.settings["qkd"]["qber_threshold"]


def _nonce_source(seed):
    if seed is None:
        return os.urandom
    return DeterministicNonceSource(hashlib.sha3_256(b"QGP-cli-nonce" + seed.to_bytes(8, "big")).digest())


# === КЛЮЧИ ===

def cmd_keygen(args):
    """Детерминированная пара ключей: <out>.pub и <out>.key."""
    seed = args.seed
    if args.scheme == "dilithium3":
        pair = sig_keygen(hashlib.sha3_256(seed).digest() if len(seed) != 32 else seed)
    else:
        pair = kem_keygen(seed if len(seed) == 64 else hashlib.shake_256(b"QGP-kem-keygen" + seed).digest(64))

    pub_path = Path(f"{args.out}.pub")
    key_path = Path(f"{args.out}.key")
    pub_path.write_bytes(pair.public_key)
    key_path.write_bytes(pair.secret_key)
    print_json({
        "scheme": pair.scheme.value,
        "public_key": str(pub_path),
        "secret_key": str(key_path),
        "public_key_sha3": hashlib.sha3_256(pair.public_key).hexdigest(),
    })
    return ExitStatus.OK


# === QKD ===

def cmd_qkd_simulate(args):
    """Серия раундов BB84 с CSV-журналом и итогом в JSON."""
    qkd = args.settings["qkd"]
    logs = run_rounds(args.rounds, args.pulses, _channel_from_args(args), _threshold(args),
                      args.seed, args.eve_from, qkd["sample_fraction"])
    if args.csv:
        write_round_log(args.csv, logs)

    materials = [row.outcome for row in logs if isinstance(row.outcome, SessionKeyMaterial)]
    if args.key_out and materials:
        write_session_key_file(args.key_out, materials[0])

    total_pulses = sum(row.n_pulses for row in logs)
    print_json({
        "rounds": [
            {
                "round": row.round,
                "qber": row.qber,
                "sifted_bits": row.sifted_bits,
                "key_bits": row.key_bits,
                "alarm": row.alarm,
                "outcome": type(row.outcome).__name__,
            }
            for row in logs
        ],
        "key_rate": sum(row.key_bits for row in logs) / total_pulses if total_pulses else 0.0,
        "key_file": args.key_out if args.key_out and materials else None,
    })

    if any(row.alarm for row in logs):
        return fail("QBER выше порога: возможен перехват, ключ не выдан", ExitStatus.ALARM)
    if len(materials) < len(logs):
        return fail("часть раундов прервана: ключ не дистиллирован", ExitStatus.ALARM)
    return ExitStatus.OK


def cmd_keyd(args):
    """Демон сервиса ключей: протокол выдачи и (опционально) HTTP-мониторинг."""
    settings = args.settings["key_service"]
    listen = args.listen or settings["listen"]
    admin = args.admin_listen or settings["admin_listen"]

    qkd = args.settings["qkd"]
    pool = KeyPool(args.db or settings["db_path"])
    if args.rounds:
        rows = run_rounds(args.rounds, args.pulses, _channel_from_args(args), _threshold(args),
                          args.seed, sample_fraction=qkd["sample_fraction"])
        for row in rows:
            if isinstance(row.outcome, SessionKeyMaterial):
                pool.ingest_split(row.outcome, qkd["session_key_bits"])
            elif isinstance(row.outcome, AbortQberAlarm):
                pool.raise_alarm(row.outcome.qber)
        log.info("keyd: пул пополнен, %d бит", pool.stored_bits)

    host, port = parse_address(listen)
    server = KeyServiceServer(pool, host, port, settings["max_frame_bytes"])

    from app import app, print_banner, socketio
    app.config["KEY_POOL"] = pool
    stale_after = args.stale_after if args.stale_after is not None else settings["stale_after_s"]
    app.config["STALE_AFTER_S"] = None if stale_after is None else float(stale_after)

    if admin:
        admin_host, admin_port = parse_address(admin)
        threading.Thread(
            target=socketio.run,
            args=(app,),
            kwargs={"host": admin_host, "port": admin_port, "use_reloader": False,
                    "allow_unsafe_werkzeug": True, "log_output": False},
            daemon=True,
        ).start()

    print_banner(listen, admin)
    try:
        asyncio.run(server.serve_forever())
    except KeyboardInterrupt:
        print("✅ keyd остановлен", file=sys.stderr)
    return ExitStatus.OK


# === КОНВЕРТЫ ===

def cmd_seal(args):
    message = read_file(args.input)
    signer_secret = read_file(args.sign_key)
    kem_public = read_file(args.kem_pub) if args.kem_pub else None

    session_key = None
    if args.session_key:
        session_key = read_session_key_file(args.session_key)
    elif args.key_service:
        resp = KeyServiceClient(args.key_service).get_key(
            args.requester, args.peer, args.settings["qkd"]["session_key_bits"])
        if resp.get("status") != "ok":
            return fail(f"сервис ключей отказал: {resp.get('code')}", ExitStatus.ALARM)
        session_key = material_from_response(resp)

    hash_algorithm = HashAlgorithm.SHA2_256 if args.hash == "sha2-256" else HashAlgorithm.SHA3_256
    ctx = SealContext(
        signer_secret=signer_secret,
        session_key=session_key,
        recipient_kem_public=kem_public,
        hash_algorithm=hash_algorithm,
    )
    envelope = seal(message, ctx, _nonce_source(args.seed))
    Path(args.out).write_bytes(envelope)

    print_json({
        "envelope": args.out,
        "bytes": len(envelope),
        "layers": [name for name, on in (("QKD", session_key), ("Kyber", kem_public)) if on is not None],
        "key_id": session_key.key_id.hex() if session_key is not None else None,
    })
    return ExitStatus.OK


def cmd_open(args):
    data = read_file(args.input)
    verify_key = read_file(args.verify_key)
    kem_secret = read_file(args.kem_key) if args.kem_key else None

    key_lookup = None
    if args.session_key:
        material = read_session_key_file(args.session_key)
        key_lookup = {bytes(material.key_id): material.key_bytes()}
    elif args.key_service:
        client = KeyServiceClient(args.key_service)

        def key_lookup(key_id: bytes):
            resp = client.get_key_by_id(args.requester, key_id.hex())
            if resp.get("status") != "ok":
                log.warning("open: сервис ключей ответил %s", resp.get("code"))
                return None
            return material_from_response(resp).key_bytes()

    outcome = open_envelope(data, kem_secret, key_lookup, verify_key, ReplayRegistry())
    if not outcome.ok:
        return fail(f"open: {outcome.error.value}", ExitStatus.AUTH_FAILURE)

    if args.out:
        Path(args.out).write_bytes(outcome.message)
    try:
        text = outcome.message.decode("utf-8")
    except UnicodeDecodeError:
        text = None
    print_json({"ok": True, "bytes": len(outcome.message), "message": text,
                "message_hex": outcome.message.hex()})
    return ExitStatus.OK


# === СЦЕНАРИИ ===

def cmd_scenario(args):
    spec = load_scenario(args.spec)
    if isinstance(spec.classical_adversary, ReplayEnvelope):
        report = replay_attack_check(spec)
    else:
        report = run_scenario(spec)

    write_report(args.report, report)
    if args.trace:
        trace = [
            {"message_index": t.message_index, "layer": t.layer, "detail": t.detail}
            for t in layer_trace(spec)
        ]
        Path(args.trace).write_text(json.dumps(trace, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    print(report.to_json())

    if report.alarm_triggered:
        return fail("в сценарии сработала тревога QBER", ExitStatus.ALARM)
    if not all(m["delivered"] for m in report.per_message):
        return fail("часть сообщений отклонена получателем", ExitStatus.AUTH_FAILURE)
    return ExitStatus.OK


# === ШОР ===

def cmd_shor(args):
    N = args.n
    t = args.t or default_t(N)
    x = args.x
    if x is None:
        x = next((c for c in range(2, N) if math.gcd(c, N) == 1), None)
        if x is None:
            return fail(f"нет основания, взаимно простого с N={N}", ExitStatus.USAGE)

    cfg = OrderFindingConfig(N=N, x=x, t=t, budget=args.settings["shor"]["amplitude_budget"])
    if args.hist:
        state = apply_qft_argument(build_order_state(cfg), args.qft_cutoff)
        write_histogram(args.hist, argument_distribution(state))

    result = run_order_finding(cfg, args.seed, args.samples, args.qft_cutoff)
    factors = None
    r = result.period
    if r is not None and r % 2 == 0 and mod_exp(x, r // 2, N) != N - 1:
        p = math.gcd(mod_exp(x, r // 2, N) - 1, N)
        if 1 < p < N:
            factors = sorted((p, N // p))
    if factors is None:
        outcome = shor_factor(N, args.seed, args.attempts, t=t, cutoff_k=args.qft_cutoff,
                              samples=args.samples, budget=cfg.budget)
        if isinstance(outcome, FactorPair):
            factors = list(outcome.factors)

    print_json({
        "N": N,
        "x": x,
        "t": t,
        "qft_cutoff": args.qft_cutoff or t,
        "z_values": result.z_values,
        "period": r,
        "factors": factors,
    })
    if factors is None:
        return fail(f"за {args.attempts} попыток множители не найдены", ExitStatus.ALARM)
    return ExitStatus.OK


# === МОНИТОРИНГ ===

def cmd_status(args):
    if args.key_service:
        data = KeyServiceClient(args.key_service).status()
    else:
        data = api_request("GET", "/api/status")
    print_json(data)
    return ExitStatus.ALARM if data.get("alarm") else ExitStatus.OK


def cmd_alarm_raise(args):
    payload = {"reason": args.reason}
    if args.qber is not None:
        payload["qber"] = args.qber
    data = api_request("POST", "/api/alarm", json_data=payload)
    print("✅ Тревога поднята", file=sys.stderr)
    print_json(data["status"])
    return ExitStatus.OK


def cmd_alarm_clear(_args):
    data = api_request("DELETE", "/api/alarm")
    print("✅ Тревога снята", file=sys.stderr)
    print_json(data["status"])
    return ExitStatus.OK


def _add_channel_args(p, pulses_default: int):
    p.add_argument("--pulses", type=int, default=pulses_default, help="Число импульсов за раунд.")
    p.add_argument("--noise", type=float, default=0.0, help="Вероятность переворота бита детектором.")
    p.add_argument("--loss", type=float, default=0.0, help="Вероятность потери импульса.")
    p.add_argument("--eve", type=float, default=0.0, help="Доля импульсов, перехваченных Евой.")
    p.add_argument("--threshold", type=float, help="Порог QBER для тревоги (по умолчанию из конфигурации, 0.11).")
    p.add_argument("--seed", type=int, default=0, help="Seed симуляции.")


def build_parser():
    epilog = """\
Примеры использования:

  1) Ключи подписи и KEM:
     qgp_cli.py keygen --scheme dilithium3 --seed <64 hex> --out alice
     qgp_cli.py keygen --scheme kyber768 --seed <64 hex> --out bob

  2) Симуляция канала с перехватом:
     qgp_cli.py qkd simulate --pulses 100000 --eve 1.0 --seed 1 --csv out.csv

  3) Конверт QGP через файл сессионного ключа:
     qgp_cli.py qkd simulate --pulses 50000 --noise 0.01 --seed 7 --key-out session.key
     qgp_cli.py seal --in msg.txt --out msg.qgp --sign-key alice.key --kem-pub bob.pub --session-key session.key --seed 1
     qgp_cli.py open --in msg.qgp --verify-key alice.pub --kem-key bob.key --session-key session.key

  4) Сценарий TCP/IPQ и демонстрация Шора:
     qgp_cli.py scenario --spec scenario.json --report report.json
     qgp_cli.py shor --n 15 --t 8 --seed 1 --hist hist.csv

Коды выхода: 0 — успех, 1 — ошибка подлинности, 2 — тревога/прерывание, 3 — ошибка ввода.
"""

    parser = QgpArgumentParser(
        prog="qgp_cli.py",
        description=(
            "CLI для стека QGP: QKD-канал, сервис ключей, конверты Dilithium/Kyber,\n"
            "сценарии TCP/IPQ и демонстрация алгоритма Шора."
        ),
        formatter_class=argparse.RawTextHelpFormatter,
        epilog=epilog,
    )
    parser.add_argument("--config", help="YAML-файл настроек (секции qkd, key_service, shor, logging).")
    parser.add_argument("--log-level", help="Уровень логирования: DEBUG, INFO, WARNING, ERROR.")
    parser.add_argument(
        "--url",
        help=(
            "Базовый URL HTTP-мониторинга для status/alarm.\n"
            "По умолчанию 'http://localhost:5000'."
        ),
    )

    subparsers = parser.add_subparsers(dest="command")

    p_keygen = subparsers.add_parser(
        "keygen",
        aliases=["kg"],
        help="Сгенерировать пару ключей из seed.",
        description=(
            "Пара ключей Dilithium3 или Kyber768. Пишет <out>.pub и <out>.key (сырые байты).\n\n"
            "Пример:\n"
            "  qgp_cli.py keygen --scheme dilithium3 --seed 00..00 --out alice"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_keygen.add_argument("--scheme", required=True, choices=["dilithium3", "kyber768"], help="Схема.")
    p_keygen.add_argument("--seed", required=True, type=parse_hex_seed, help="Seed в hex (32 или 64 байта).")
    p_keygen.add_argument("--out", required=True, help="Префикс путей ключей.")
    p_keygen.set_defaults(func=cmd_keygen)

    p_qkd = subparsers.add_parser(
        "qkd",
        help="Симуляция квантового канала BB84.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    qkd_sub = p_qkd.add_subparsers(dest="qkd_cmd")
    p_simulate = qkd_sub.add_parser(
        "simulate",
        aliases=["sim"],
        help="Раунды обмена с оценкой QBER.",
        description=(
            "Раунды BB84: просеивание, оценка QBER, согласование, усиление секретности.\n\n"
            "Пример:\n"
            "  qgp_cli.py qkd simulate --pulses 100000 --eve 1.0 --seed 1 --csv out.csv"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    _add_channel_args(p_simulate, 100_000)
    p_simulate.add_argument("--rounds", type=int, default=1, help="Число раундов.")
    p_simulate.add_argument("--eve-from", type=int, default=0, help="С какого раунда включается Ева.")
    p_simulate.add_argument("--csv", help="CSV-журнал: round,qber,sifted_bits,key_bits,alarm.")
    p_simulate.add_argument("--key-out", help="Файл сессионного ключа первого успешного раунда.")
    p_simulate.set_defaults(func=cmd_qkd_simulate)

    p_keyd = subparsers.add_parser(
        "keyd",
        help="Запустить сервис ключей.",
        description=(
            "Сервис ключей: 4 байта длины + JSON. Опционально пополняет пул\n"
            "симуляцией слоя 0 и поднимает HTTP-мониторинг.\n\n"
            "Пример:\n"
            "  qgp_cli.py keyd --listen 127.0.0.1:7070 --admin-listen 127.0.0.1:5000 --rounds 4"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_keyd.add_argument("--listen", help="host:port протокола выдачи ключей.")
    p_keyd.add_argument("--admin-listen", help="host:port HTTP-мониторинга (Flask + Socket.IO).")
    p_keyd.add_argument("--db", help="Путь к sqlite-базе пула (по умолчанию в памяти).")
    p_keyd.add_argument("--rounds", type=int, default=0, help="Раундов слоя 0 для пополнения пула.")
    p_keyd.add_argument("--stale-after", type=float, help="Тревога, если ключей не было дольше N секунд.")
    _add_channel_args(p_keyd, 50_000)
    p_keyd.set_defaults(func=cmd_keyd)

    p_seal = subparsers.add_parser(
        "seal",
        help="Запечатать сообщение в конверт QGP.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_seal.add_argument("--in", dest="input", required=True, help="Файл сообщения.")
    p_seal.add_argument("--out", required=True, help="Файл конверта.")
    p_seal.add_argument("--sign-key", required=True, help="Секретный ключ Dilithium3.")
    p_seal.add_argument("--kem-pub", help="Открытый ключ Kyber768 получателя.")
    key_source = p_seal.add_mutually_exclusive_group()
    key_source.add_argument("--key-service", help="host:port сервиса ключей.")
    key_source.add_argument("--session-key", help="Файл сессионного ключа (key_id ‖ ключ).")
    p_seal.add_argument("--requester", default="alice", help="Кто запрашивает ключ.")
    p_seal.add_argument("--peer", default="bob", help="Для кого ключ.")
    p_seal.add_argument("--hash", choices=["sha3-256", "sha2-256"], default="sha3-256", help="Хэш сообщения.")
    p_seal.add_argument("--seed", type=int, help="Seed для nonce и KEM (иначе os.urandom).")
    p_seal.set_defaults(func=cmd_seal)

    p_open = subparsers.add_parser(
        "open",
        help="Вскрыть и проверить конверт QGP.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_open.add_argument("--in", dest="input", required=True, help="Файл конверта.")
    p_open.add_argument("--verify-key", required=True, help="Открытый ключ Dilithium3 отправителя.")
    p_open.add_argument("--kem-key", help="Секретный ключ Kyber768.")
    key_lookup = p_open.add_mutually_exclusive_group()
    key_lookup.add_argument("--key-service", help="host:port сервиса ключей.")
    key_lookup.add_argument("--session-key", help="Файл сессионного ключа.")
    p_open.add_argument("--requester", default="bob", help="Кто запрашивает ключ по key_id.")
    p_open.add_argument("--out", help="Куда записать сообщение.")
    p_open.set_defaults(func=cmd_open)

    p_scenario = subparsers.add_parser(
        "scenario",
        aliases=["sc"],
        help="Прогнать сценарий TCP/IPQ.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_scenario.add_argument("--spec", required=True, help="JSON-описание сценария.")
    p_scenario.add_argument("--report", required=True, help="Куда записать отчёт.")
    p_scenario.add_argument("--trace", help="Куда записать трассировку слоёв (JSON).")
    p_scenario.set_defaults(func=cmd_scenario)

    p_shor = subparsers.add_parser(
        "shor",
        help="Демонстрация поиска порядка и факторизации.",
        description=(
            "Пример:\n"
            "  qgp_cli.py shor --n 15 --t 8 --seed 1 --hist hist.csv"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_shor.add_argument("--n", type=int, required=True, help="Модуль N.")
    p_shor.add_argument("--x", type=int, help="Основание (по умолчанию наименьшее взаимно простое).")
    p_shor.add_argument("--t", type=int, help="Кубитов аргумента (по умолчанию 2·⌈log2 N⌉).")
    p_shor.add_argument("--qft-cutoff", type=int, help="Отбросить фазы с расстоянием >= k.")
    p_shor.add_argument("--seed", type=int, default=0, help="Seed измерений.")
    p_shor.add_argument("--samples", type=int, default=20, help="Измерений на поиск порядка.")
    p_shor.add_argument("--attempts", type=int, default=10, help="Попыток факторизации.")
    p_shor.add_argument("--hist", help="CSV z,probability.")
    p_shor.set_defaults(func=cmd_shor)

    p_status = subparsers.add_parser(
        "status",
        aliases=["st"],
        help="Состояние пула ключей.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    p_status.add_argument("--key-service", help="host:port сервиса ключей (иначе HTTP по --url).")
    p_status.set_defaults(func=cmd_status)

    p_alarm = subparsers.add_parser(
        "alarm",
        help="Управление тревогой через HTTP-мониторинг.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    alarm_sub = p_alarm.add_subparsers(dest="alarm_cmd")
    p_raise = alarm_sub.add_parser("raise", help="Поднять тревогу.")
    p_raise.add_argument("--qber", type=float, help="Зафиксированный QBER.")
    p_raise.add_argument("--reason", default="qber", help="Причина.")
    p_raise.set_defaults(func=cmd_alarm_raise)
    p_clear = alarm_sub.add_parser("clear", help="Снять тревогу.")
    p_clear.set_defaults(func=cmd_alarm_clear)

    return parser


def main(argv=None) -> int:
    global BASE_URL
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help завершается с 0, ошибки разбора — с 3
        return int(e.code or 0)

    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return ExitStatus.USAGE

    try:
        args.settings = config.load_config(args.config)
    except (OSError, ValueError) as e:
        return fail(f"конфигурация: {e}", ExitStatus.USAGE)
    config.setup_logging(args.log_level or args.settings["logging"]["level"])
    if args.url:
        BASE_URL = args.url

    try:
        return int(args.func(args))
    except (ScenarioError, ShorError, CodecUsageError, ValueError) as e:
        return fail(str(e), ExitStatus.USAGE)
    except OSError as e:
        return fail(f"ввод-вывод: {e}", ExitStatus.USAGE)


def execute(argv) -> int:
    return main(list(argv))


if __name__ == "__main__":
    sys.exit(main())
