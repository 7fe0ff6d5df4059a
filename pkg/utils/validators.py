# utils/validators.py
import math
import re

# Допустимые операции протокола выдачи ключей
ALLOWED_OPS = {
    'get_key',
    'get_key_by_id',
    'status',
}

ALLOWED_LAYERS = {
    'QKD',
    'Kyber',
}

ALLOWED_ADVERSARIES = {
    'tamper_byte',
    'replay_envelope',
}

KEY_ID_PATTERN = re.compile(r"^[0-9a-f]{32}$")


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_count(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def validate_probability(name: str, value, allow_one: bool = True) -> list[str]:
    """Проверка вероятности: [0, 1] или [0, 1)."""
    errors = []
    if not _is_number(value):
        errors.append(f"Поле '{name}' должно быть числом")
        return errors

    upper_ok = value <= 1 if allow_one else value < 1
    if value < 0 or not upper_ok:
        bound = "[0, 1]" if allow_one else "[0, 1)"
        errors.append(f"Поле '{name}' должно лежать в {bound}, получено {value}")
    return errors


def validate_channel_params(noise_flip_prob, loss_prob, intercept_prob=None) -> list[str]:
    """Параметры фотонного канала. Возвращает список ошибок (если пустой — всё ок)."""
    errors: list[str] = []
    errors += validate_probability("noise_flip_prob", noise_flip_prob)
    errors += validate_probability("loss_prob", loss_prob, allow_one=True)
    if intercept_prob is not None:
        errors += validate_probability("intercept_prob", intercept_prob)
    return errors


def validate_threshold(value) -> list[str]:
    if not _is_number(value) or not 0 < value < 0.5:
        return [f"Порог QBER должен лежать в (0, 0.5), получено {value}"]
    return []


def validate_key_request(data) -> list[str]:
    """
    Проверка запроса к сервису ключей.
    Неизвестные поля игнорируются, отсутствие обязательных — ошибка.
    """
    errors: list[str] = []

    if not isinstance(data, dict):
        errors.append("Запрос должен быть JSON-объектом")
        return errors

    op = data.get("op")
    if op not in ALLOWED_OPS:
        errors.append(
            f"Недопустимая операция: {op}. "
            f"Разрешено: {', '.join(sorted(ALLOWED_OPS))}"
        )
        return errors

    if op == "status":
        return errors

    # Запрашивающая сторона нужна для обеих операций выдачи
    requester = data.get("requester")
    if not isinstance(requester, str) or not requester.strip():
        errors.append("Нужно непустое поле 'requester'")

    if op == "get_key":
        peer = data.get("peer")
        if not isinstance(peer, str) or not peer.strip():
            errors.append("Нужно непустое поле 'peer'")
        size_bits = data.get("size_bits")
        if not _is_count(size_bits) or size_bits < 1:
            errors.append("Поле 'size_bits' должно быть целым числом >= 1")

    if op == "get_key_by_id":
        key_id = data.get("key_id")
        if not isinstance(key_id, str) or not KEY_ID_PATTERN.match(key_id):
            errors.append("Поле 'key_id' должно быть 32 символами hex в нижнем регистре")

    return errors


def validate_scenario_data(data) -> list[str]:
    """Проверка JSON-описания сценария TCP/IPQ."""
    errors: list[str] = []

    if not isinstance(data, dict):
        return ["Сценарий должен быть JSON-объектом"]

    seed = data.get("seed")
    if not _is_count(seed) or not 0 <= seed < 2 ** 64:
        errors.append("Поле 'seed' должно быть целым 64-битным числом")

    n_pulses = data.get("n_pulses")
    if not _is_count(n_pulses) or n_pulses < 1:
        errors.append("Поле 'n_pulses' должно быть целым числом >= 1")

    errors += validate_threshold(data.get("qber_threshold", 0.11))

    channel = data.get("channel", {})
    if not isinstance(channel, dict):
        errors.append("Поле 'channel' должно быть объектом")
    else:
        errors += validate_channel_params(
            channel.get("noise_flip_prob", 0.0),
            channel.get("loss_prob", 0.0),
            channel.get("eve_intercept_prob"),
        )

    messages = data.get("messages")
    if not isinstance(messages, list):
        errors.append("Поле 'messages' должно быть списком")
        messages = []
    for i, m in enumerate(messages):
        if isinstance(m, str):
            continue
        if isinstance(m, dict) and isinstance(m.get("hex"), str):
            try:
                bytes.fromhex(m["hex"])
            except ValueError:
                errors.append(f"Сообщение #{i}: некорректный hex")
            continue
        errors.append(f"Сообщение #{i}: нужна строка или объект {{'hex': ...}}")

    layers = data.get("layers", ["QKD", "Kyber"])
    if not isinstance(layers, list) or not layers:
        errors.append("Поле 'layers' должно быть непустым списком")
    else:
        for layer in layers:
            if layer not in ALLOWED_LAYERS:
                errors.append(
                    f"Недопустимый слой: {layer}. Разрешено: {', '.join(sorted(ALLOWED_LAYERS))}"
                )

    rounds = data.get("rounds", 1)
    if not _is_count(rounds) or rounds < 1:
        errors.append("Поле 'rounds' должно быть целым числом >= 1")
    eve_start = data.get("eve_start_round", 0)
    if not _is_count(eve_start) or eve_start < 0:
        errors.append("Поле 'eve_start_round' должно быть целым числом >= 0")

    adversary = data.get("classical_adversary")
    if adversary is not None:
        if not isinstance(adversary, dict) or adversary.get("type") not in ALLOWED_ADVERSARIES:
            errors.append(
                f"Недопустимый противник: {adversary}. "
                f"Разрешено: {', '.join(sorted(ALLOWED_ADVERSARIES))}"
            )
        else:
            index = adversary.get("message_index")
            if not _is_count(index) or not 0 <= index < len(messages):
                errors.append("Поле 'message_index' вне диапазона сообщений")
            if adversary["type"] == "tamper_byte":
                offset = adversary.get("byte_offset")
                if not _is_count(offset) or offset < 0:
                    errors.append("Поле 'byte_offset' должно быть целым числом >= 0")

    return errors


def validate_order_finding(N, x, t, budget=None) -> list[str]:
    """Проверка конфигурации поиска порядка. budget=None — объём не проверяется."""
    errors: list[str] = []

    if not _is_count(N) or N < 15 or N % 2 == 0:
        errors.append("N должно быть нечётным числом >= 15")
        return errors

    if not _is_count(x) or not 1 < x < N:
        errors.append("x должно лежать в (1, N)")
    elif math.gcd(x, N) != 1:
        errors.append(f"x={x} и N={N} не взаимно просты")

    if not _is_count(t) or t < 1:
        errors.append("t должно быть целым числом >= 1")
    elif budget is not None:
        n = math.ceil(math.log2(N))
        if (1 << t) * (1 << n) > budget:
            errors.append(
                f"Вектор состояния 2^{t}·2^{n} превышает бюджет {budget} амплитуд"
            )

    return errors
