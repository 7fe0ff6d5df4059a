# tests/test_shor_demo.py
import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
import csv

import numpy as np
import pytest

from shor_demo import (
    FactorPair,
    OrderFindingConfig,
    ResourceBudgetError,
    ShorError,
    StateVector,
    apply_qft_argument,
    argument_distribution,
    build_order_state,
    extract_period,
    is_prime_power,
    mod_exp,
    multiplicative_order_oracle,
    run_order_finding,
    sample_z,
    shor_factor,
    write_histogram,
)

TOL = 1e-9
TRIALS = 1000


def distribution(N, x, t, cutoff_k=None):
    cfg = OrderFindingConfig(N=N, x=x, t=t)
    return argument_distribution(apply_qft_argument(build_order_state(cfg), cutoff_k))


@pytest.fixture(scope="module")
def dist_15_7():
    return distribution(15, 7, 8)


def first_period(dist, seed, T, N, x, samples=5):
    for z in sample_z(dist, seed, samples):
        r = extract_period(z, T, N, x)
        if r is not None:
            return r
    return None


# ===== АРИФМЕТИКА =====

def test_mod_exp_matches_builtin_pow():
    rng = np.random.default_rng(0)
    for _ in range(200):
        b, e, m = (int(v) for v in rng.integers(1, 10_000, 3))
        assert mod_exp(b, e, m) == pow(b, e, m)
    assert mod_exp(5, 0, 7) == 1
    assert mod_exp(5, 3, 1) == 0


def test_is_prime_power():
    assert [n for n in range(2, 30) if is_prime_power(n)] == [
        2, 3, 4, 5, 7, 8, 9, 11, 13, 16, 17, 19, 23, 25, 27, 29
    ]
    assert is_prime_power(15) is False
    assert is_prime_power(1) is False


def test_multiplicative_order_oracle():
    assert multiplicative_order_oracle(15, 7) == 4
    assert multiplicative_order_oracle(15, 4) == 2
    assert multiplicative_order_oracle(21, 2) == 6
    assert multiplicative_order_oracle(35, 1) == 1
    with pytest.raises(ShorError):
        multiplicative_order_oracle(15, 5)


# ===== КОНФИГУРАЦИЯ =====

@pytest.mark.parametrize("N, x, t", [
    (14, 3, 8),    # чётное
    (9, 2, 8),     # меньше 15
    (25, 2, 8),    # степень простого
    (23, 2, 8),    # простое
    (15, 5, 8),    # не взаимно просты
    (15, 15, 8),   # x вне (1, N)
    (15, 7, 0),
])
def test_invalid_config(N, x, t):
    with pytest.raises(ShorError):
        OrderFindingConfig(N=N, x=x, t=t)


def test_budget_exceeded():
    with pytest.raises(ResourceBudgetError):
        OrderFindingConfig(N=15, x=7, t=8, budget=1000)
    assert OrderFindingConfig(N=15, x=7, t=8, budget=256 * 16).T == 256


# ===== ВЕКТОР СОСТОЯНИЯ =====

def test_order_state_structure():
    cfg = OrderFindingConfig(N=15, x=7, t=8)
    state = build_order_state(cfg)
    assert state.amplitudes.shape == (256, 16)
    assert state.norm == pytest.approx(1.0, abs=TOL)
    for a in (0, 1, 2, 3, 4, 255):
        column = int(np.flatnonzero(state.amplitudes[a])[0])
        assert column == pow(7, a, 15)


def test_distribution_before_qft_is_uniform():
    state = build_order_state(OrderFindingConfig(N=21, x=2, t=6))
    probs = argument_distribution(state).probabilities
    assert np.allclose(probs, 1 / 64, atol=TOL)


def test_qft_of_zero_argument_is_uniform():
    amplitudes = np.zeros((32, 4), dtype=np.complex128)
    amplitudes[0, 3] = 1.0
    out = apply_qft_argument(StateVector(amplitudes, t=5, n=2))
    assert np.allclose(out.amplitudes[:, 3], 1 / np.sqrt(32), atol=TOL)
    assert np.allclose(out.amplitudes[:, :3], 0.0, atol=TOL)


@pytest.mark.parametrize("t", range(1, 11))
def test_exact_qft_matches_dense_dft(t):
    rng = np.random.default_rng(t)
    T = 1 << t
    amplitudes = rng.normal(size=(T, 2)) + 1j * rng.normal(size=(T, 2))
    amplitudes /= np.linalg.norm(amplitudes)
    out = apply_qft_argument(StateVector(amplitudes, t=t, n=1))
    # КПФ со знаком +i — это обратное ДПФ с нормировкой 1/√T
    expected = np.fft.ifft(amplitudes, axis=0, norm="ortho")
    assert np.allclose(out.amplitudes, expected, atol=TOL)


def test_approximate_qft_is_unitary_but_not_dft():
    rng = np.random.default_rng(3)
    amplitudes = rng.normal(size=(64, 2)) + 1j * rng.normal(size=(64, 2))
    amplitudes /= np.linalg.norm(amplitudes)
    state = StateVector(amplitudes, t=6, n=1)
    for cutoff in range(1, 7):
        assert apply_qft_argument(state, cutoff).norm == pytest.approx(1.0, abs=TOL)
    hadamard_only = apply_qft_argument(state, 1).amplitudes
    assert not np.allclose(hadamard_only, np.fft.ifft(amplitudes, axis=0, norm="ortho"))


def test_qft_cutoff_out_of_range():
    state = build_order_state(OrderFindingConfig(N=15, x=7, t=4))
    with pytest.raises(ShorError):
        apply_qft_argument(state, 0)
    with pytest.raises(ShorError):
        apply_qft_argument(state, 5)


# ===== РАСПРЕДЕЛЕНИЕ z =====

@pytest.mark.parametrize("x, spikes", [
    (7, [0, 64, 128, 192]),
    (2, [0, 64, 128, 192]),
    (4, [0, 128]),
])
def test_spikes_at_multiples_of_T_over_r(x, spikes):
    dist = distribution(15, x, 8)
    assert dist.support() == spikes
    for z in spikes:
        assert dist.probabilities[z] == pytest.approx(1 / len(spikes), abs=TOL)
    assert dist.probabilities.sum() == pytest.approx(1.0, abs=TOL)


def test_sampling_frequencies(dist_15_7):
    samples = np.array(sample_z(dist_15_7, 11, 10_000))
    for z in (0, 64, 128, 192):
        assert np.mean(samples == z) == pytest.approx(0.25, abs=0.02)
    assert set(samples.tolist()) == {0, 64, 128, 192}


def test_sampling_is_deterministic(dist_15_7):
    assert sample_z(dist_15_7, 5, 50) == sample_z(dist_15_7, 5, 50)


def test_point_mass_sampling():
    from shor_demo import ArgumentDistribution
    probs = np.zeros(16)
    probs[9] = 1.0
    assert sample_z(ArgumentDistribution(probs), 0, 20) == [9] * 20


# ===== ИЗВЛЕЧЕНИЕ ПЕРИОДА =====

def test_extract_period_examples():
    assert extract_period(192, 256, 15, 7) == 4
    assert extract_period(64, 256, 15, 7) == 4
    assert extract_period(128, 256, 15, 7) == 4
    assert extract_period(0, 256, 15, 7) is None
    assert extract_period(128, 256, 15, 4) == 2


def test_extract_period_non_dividing_order():
    # r = 6 не делит T = 1024: пик рядом с 1024/6 · d
    assert extract_period(171, 1024, 21, 2) == 6
    assert extract_period(683, 1024, 21, 2) == 6


def test_extract_period_rejects_out_of_range_z():
    with pytest.raises(ShorError):
        extract_period(256, 256, 15, 7)
    with pytest.raises(ShorError):
        extract_period(-1, 256, 15, 7)


def test_period_recovered_within_five_samples(dist_15_7):
    found = sum(first_period(dist_15_7, seed, 256, 15, 7) == 4 for seed in range(TRIALS))
    assert found >= 0.99 * TRIALS


def test_approximate_qft_keeps_success_rate(dist_15_7):
    approx = distribution(15, 7, 8, cutoff_k=6)
    exact_rate = sum(first_period(dist_15_7, s, 256, 15, 7) == 4 for s in range(TRIALS)) / TRIALS
    approx_rate = sum(first_period(approx, s, 256, 15, 7) == 4 for s in range(TRIALS)) / TRIALS
    assert abs(exact_rate - approx_rate) < 0.05


def test_run_order_finding():
    result = run_order_finding(OrderFindingConfig(N=15, x=7, t=8), rng_seed=1, samples=20)
    assert result.period == 4
    assert 1 <= result.samples_used <= 20
    assert result.z_values[-1] in (64, 128, 192)


# ===== ФАКТОРИЗАЦИЯ =====

def test_shor_factor_15():
    outcome = shor_factor(15, rng_seed=0)
    assert isinstance(outcome, FactorPair)
    assert outcome.factors == (3, 5)


def test_shor_factor_21():
    outcome = shor_factor(21, rng_seed=0, max_attempts=20)
    assert isinstance(outcome, FactorPair)
    assert outcome.factors == (3, 7)


@pytest.mark.parametrize("N", [9, 13, 27, 16, 1])
def test_shor_factor_rejects_prime_powers_and_even(N):
    with pytest.raises(ShorError):
        shor_factor(N)


# ===== ГИСТОГРАММА =====

def test_write_histogram(tmp_path, dist_15_7):
    path = tmp_path / "hist.csv"
    write_histogram(path, dist_15_7)
    with path.open(encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["z", "probability"]
    assert len(rows) == 257
    assert float(rows[1 + 64][1]) == pytest.approx(0.25, abs=TOL)
    assert float(rows[1 + 1][1]) < TOL
