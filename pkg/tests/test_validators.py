# tests/test_validators.py
import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
import pytest

from utils.validators import (
    validate_channel_params,
    validate_key_request,
    validate_order_finding,
    validate_probability,
    validate_scenario_data,
    validate_threshold,
)


# ===== ВЕРОЯТНОСТИ И ПОРОГИ =====

@pytest.mark.parametrize("value, ok", [
    (0, True), (0.5, True), (1, True), (-0.01, False), (1.01, False),
    (True, False), ("0.1", False), (float("nan"), False),
])
def test_validate_probability(value, ok):
    assert (validate_probability("p", value) == []) is ok


def test_probability_upper_bound_can_be_open():
    assert validate_probability("p", 1.0, allow_one=False)
    assert validate_probability("p", 0.999, allow_one=False) == []


def test_validate_channel_params_collects_all_errors():
    errors = validate_channel_params(-1, 2, 3)
    assert len(errors) == 3


@pytest.mark.parametrize("value, ok", [(0.11, True), (0.0, False), (0.5, False), (None, False)])
def test_validate_threshold(value, ok):
    assert (validate_threshold(value) == []) is ok


# ===== ЗАПРОСЫ СЕРВИСА КЛЮЧЕЙ =====

def test_validate_key_request_ok():
    assert validate_key_request({"op": "status"}) == []
    assert validate_key_request(
        {"op": "get_key", "requester": "alice", "peer": "bob", "size_bits": 256, "extra": 1}
    ) == []
    assert validate_key_request({"op": "get_key_by_id", "requester": "bob", "key_id": "ab" * 16}) == []


def test_validate_key_request_errors():
    assert validate_key_request("status")
    assert validate_key_request({"op": "delete"})
    errors = validate_key_request({"op": "get_key", "requester": " ", "peer": "", "size_bits": -1})
    assert len(errors) == 3
    assert validate_key_request({"op": "get_key_by_id", "requester": "bob", "key_id": "AB" * 16})


# ===== СЦЕНАРИИ =====

def test_validate_scenario_minimal():
    assert validate_scenario_data({"seed": 0, "n_pulses": 10, "messages": []}) == []


def test_validate_scenario_errors():
    errors = validate_scenario_data({
        "seed": 2 ** 64,
        "n_pulses": 0,
        "messages": [{"hex": "zz"}, 5],
        "layers": ["QKD", "RSA"],
        "classical_adversary": {"type": "tamper_byte", "message_index": 9},
    })
    assert len(errors) == 7
    assert validate_scenario_data([]) == ["Сценарий должен быть JSON-объектом"]


# ===== ПОИСК ПОРЯДКА =====

def test_validate_order_finding():
    assert validate_order_finding(15, 7, 8) == []
    assert validate_order_finding(15, 7, 8, budget=4096) == []
    assert validate_order_finding(15, 7, 8, budget=4095)
    assert validate_order_finding(16, 3, 8)
    assert validate_order_finding(21, 7, 8)
