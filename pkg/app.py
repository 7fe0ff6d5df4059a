# app.py
from flask import Flask, request, jsonify, Response, current_app
import json
import logging

from flask_socketio import SocketIO

from key_service import ALARM_QBER, ErrorCode, KeyPool
from utils.validators import validate_probability

log = logging.getLogger(__name__)

app = Flask(__name__)
socketio = SocketIO(app, cors_allowed_origins="*")

app.config["JSON_AS_ASCII"] = False  # чтобы JSON отдавался с нормальной кириллицей
app.config["KEY_POOL"] = KeyPool()
app.config["STALE_AFTER_S"] = None   # None — проверка устаревания отключена

# Коды ошибок сервиса ключей → HTTP-статусы
ERROR_STATUS = {
    ErrorCode.BAD_REQUEST.value: 400,
    ErrorCode.PEER_MISMATCH.value: 403,
    ErrorCode.UNKNOWN_KEY_ID.value: 404,
    ErrorCode.ALREADY_CONSUMED.value: 409,
    ErrorCode.ALARM_ACTIVE.value: 503,
    ErrorCode.INSUFFICIENT_KEY.value: 503,
}


def get_pool() -> KeyPool:
    return current_app.config["KEY_POOL"]


# ===== ОБРАБОТЧИКИ ОШИБОК =====
@app.errorhandler(404)
def not_found(error):
    return jsonify({"error": "Ресурс не найден"}), 404


@app.errorhandler(400)
def bad_request(error):
    return jsonify({"error": "Некорректный запрос"}), 400


@app.errorhandler(500)
def internal_error(error):
    return jsonify({"error": "Внутренняя ошибка сервера"}), 500


@app.route('/')
def home():
    payload = {
        "project": "QGP Key Service",
        "version": "1.0",
        "description": "Мониторинг и администрирование буфера QKD-ключей (плоскость управления).",
        "endpoints": {
            "status": {
                "GET /api/status": "QBER последнего раунда, объём буфера, состояние тревоги",
                "GET /api/keys": "Метаданные ключей в буфере (без самих ключей)"
            },
            "alarm": {
                "POST /api/alarm": "Поднять тревогу вручную (qber, reason)",
                "DELETE /api/alarm": "Снять тревогу"
            },
            "keys": {
                "POST /api/request": "Запрос к сервису ключей (get_key / get_key_by_id / status)"
            }
        }
    }

    return Response(
        json.dumps(payload, ensure_ascii=False, indent=2),
        mimetype="application/json"
    )


# ==== WebSocket / Socket.IO уведомления ====
def broadcast_alarm_event(event_type: str, status: dict, reason: str | None = None):
    """
    Рассылаем событие тревоги всем подключённым клиентам.
    event_type: 'raised' | 'cleared'
    """
    payload = {"type": event_type, "status": status}
    if reason is not None:
        payload["reason"] = reason
    socketio.emit("alarm_event", payload)


# ===== СОСТОЯНИЕ =====
@app.route('/api/status', methods=['GET'])
def get_status():
    pool = get_pool()
    stale_after = current_app.config.get("STALE_AFTER_S")
    if stale_after is not None and pool.check_staleness(float(stale_after)):
        broadcast_alarm_event("raised", pool.status(), reason="stale")
    return jsonify(pool.status()), 200


@app.route('/api/keys', methods=['GET'])
def get_keys():
    keys = get_pool().list_keys()
    for key in keys:
        key["consumed"] = bool(key["consumed"])
    return jsonify({
        "success": True,
        "keys": keys,
        "count": len(keys)
    }), 200


# ===== ТРЕВОГА =====
@app.route('/api/alarm', methods=['POST'])
def raise_alarm():
    data = request.get_json(silent=True) or {}
    pool = get_pool()

    qber = data.get("qber", pool.status()["qber"] or 0.0)
    errors = validate_probability("qber", qber)
    reason = data.get("reason", ALARM_QBER)
    if not isinstance(reason, str) or not reason.strip():
        errors.append("Поле 'reason' должно быть непустой строкой")
    if errors:
        return jsonify({"error": "Ошибка валидации", "details": errors}), 400

    pool.raise_alarm(qber, reason)
    status = pool.status()
    broadcast_alarm_event("raised", status, reason)
    return jsonify({"success": True, "status": status}), 200


@app.route('/api/alarm', methods=['DELETE'])
def clear_alarm():
    pool = get_pool()
    pool.clear_alarm()
    status = pool.status()
    broadcast_alarm_event("cleared", status)
    return jsonify({"success": True, "status": status}), 200


# ===== ЗАПРОСЫ КЛЮЧЕЙ =====
@app.route('/api/request', methods=['POST'])
def key_request():
    data = request.get_json(silent=True)
    resp = get_pool().serve_key(data)
    if resp["status"] == "ok":
        return jsonify(resp), 200
    return jsonify(resp), ERROR_STATUS.get(resp["code"], 400)


# ======= БАНЕР =====================
def print_banner(listen: str = "127.0.0.1:7070", admin: str | None = None):
    line = "=" * 80
    print(line)
    print("QGP KEY SERVICE".center(80))
    print(line)
    print(f"Протокол ключей: tcp://{listen}  (4 байта длины + JSON)")
    print("  get_key        - зарезервировать ключ для пары requester → peer")
    print("  get_key_by_id  - получить парный ключ по key_id (один раз)")
    print("  status         - QBER, объём буфера, тревога")
    print()

    if admin:
        print(f"HTTP-мониторинг: http://{admin}")
        print("  GET    /api/status           - состояние пула")
        print("  GET    /api/keys             - метаданные ключей")
        print("  POST   /api/alarm            - поднять тревогу")
        print("  DELETE /api/alarm            - снять тревогу")
        print("  POST   /api/request          - запрос к сервису ключей")
        print("  Socket.IO: alarm_event")
    print(line)


# ===== ЗАПУСК СЕРВЕРА =====
if __name__ == '__main__':
    print_banner(admin="0.0.0.0:5000")
    socketio.run(app, host="0.0.0.0", port=5000, debug=True)
