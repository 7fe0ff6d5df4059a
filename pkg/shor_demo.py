# shor_demo.py
"""
Плотная симуляция вектора состояния для поиска порядка (алгоритм Шора):
суперпозиция аргумента, модульное возведение в степень, (приближённое) КПФ,
измерение и классическая часть: цепные дроби и сведение факторизации к порядку.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from utils.validators import validate_order_finding

log = logging.getLogger(__name__)

DEFAULT_AMPLITUDE_BUDGET = 1 << 24
CANDIDATE_MULTIPLES = 4
DEFAULT_SAMPLES = 5
NORM_TOLERANCE = 1e-9


class ShorError(ValueError):
    pass


class ResourceBudgetError(ShorError):
    """Вектор состояния не помещается в бюджет амплитуд."""


# ===== АРИФМЕТИКА =====
def mod_exp(base: int, exponent: int, modulus: int) -> int:
    """Возведение в степень по модулю (square-and-multiply)."""
    if modulus == 1:
        return 0
    result, base = 1, base % modulus
    while exponent > 0:
        if exponent & 1:
            result = result * base % modulus
        base = base * base % modulus
        exponent >>= 1
    return result


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    return all(n % d for d in range(3, math.isqrt(n) + 1, 2))


def _integer_root(n: int, k: int) -> int:
    """Наибольшее r с r^k <= n."""
    lo, hi = 1, 1 << (n.bit_length() // k + 1)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if mid ** k <= n:
            lo = mid
        else:
            hi = mid - 1
    return lo


def is_prime_power(n: int) -> bool:
    """n = p^k для простого p и k >= 1."""
    if n < 2:
        return False
    for k in range(1, n.bit_length() + 1):
        root = _integer_root(n, k)
        if root < 2:
            break
        if root ** k == n and _is_prime(root):
            return True
    return False


def _prime_factors(n: int) -> List[int]:
    factors, d = [], 2
    while d * d <= n:
        if n % d == 0:
            factors.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        factors.append(n)
    return factors


def multiplicative_order_oracle(N: int, x: int) -> int:
    """Порядок x по модулю N прямым перебором."""
    if math.gcd(x, N) != 1:
        raise ShorError(f"x={x} и N={N} не взаимно просты")
    r, value = 1, x % N
    while value != 1 % N:
        value = value * x % N
        r += 1
    return r


# ===== ТИПЫ =====
@dataclass(frozen=True)
class OrderFindingConfig:
    N: int
    x: int
    t: int
    budget: int = DEFAULT_AMPLITUDE_BUDGET

    def __post_init__(self):
        errors = validate_order_finding(self.N, self.x, self.t)
        if errors:
            raise ShorError("; ".join(errors))
        if _is_prime(self.N) or is_prime_power(self.N):
            raise ShorError(f"N={self.N} — простое число или степень простого")
        if self.T * (1 << self.n) > self.budget:
            raise ResourceBudgetError(
                f"вектор 2^{self.t}·2^{self.n} амплитуд превышает бюджет {self.budget}"
            )

    @property
    def T(self) -> int:
        return 1 << self.t

    @property
    def n(self) -> int:
        return math.ceil(math.log2(self.N))


@dataclass
class StateVector:
    """Амплитуды формы (T, 2^n): строка — аргумент a, столбец — значение функции."""
    amplitudes: np.ndarray
    t: int
    n: int

    @property
    def T(self) -> int:
        return 1 << self.t

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def flat(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)


@dataclass
class ArgumentDistribution:
    probabilities: np.ndarray

    @property
    def T(self) -> int:
        return int(self.probabilities.shape[0])

    def support(self, tol: float = NORM_TOLERANCE) -> List[int]:
        return [int(z) for z in np.flatnonzero(self.probabilities > tol)]


@dataclass
class OrderFindingResult:
    period: Optional[int]
    z_values: List[int] = field(default_factory=list)

    @property
    def samples_used(self) -> int:
        return len(self.z_values)


@dataclass(frozen=True)
class FactorPair:
    factors: Tuple[int, int]
    x: int
    period: Optional[int]   # None — множитель найден через gcd без квантовой части
    attempts: int


@dataclass(frozen=True)
class FactorFailure:
    attempts: int
    reason: str = "attempts exhausted"


FactorOutcome = Union[FactorPair, FactorFailure]


# ===== КВАНТОВАЯ ЧАСТЬ =====
def build_order_state(cfg: OrderFindingConfig) -> StateVector:
    """(1/√T) Σ_a |a⟩|x^a mod N⟩."""
    T, F = cfg.T, 1 << cfg.n
    a = np.arange(T, dtype=np.int64)

    # Векторный square-and-multiply по всем a сразу
    values = np.ones(T, dtype=np.int64)
    power = np.int64(cfg.x % cfg.N)
    for bit in range(cfg.t):
        mask = ((a >> bit) & 1).astype(bool)
        values = np.where(mask, values * power % cfg.N, values)
        power = power * power % cfg.N

    amplitudes = np.zeros((T, F), dtype=np.complex128)
    amplitudes[a, values] = 1.0 / math.sqrt(T)
    return StateVector(amplitudes=amplitudes, t=cfg.t, n=cfg.n)


def apply_qft_argument(state: StateVector, cutoff_k: Optional[int] = None) -> StateVector:
    """
    КПФ на регистре аргумента гейтами: H и управляемые фазы π/2^d,
    где d — расстояние между кубитами. Фазы с d >= cutoff_k опускаются;
    cutoff_k = t — точное КПФ. В конце — разворот порядка кубитов.
    """
    t = state.t
    cutoff_k = t if cutoff_k is None else cutoff_k
    if not 1 <= cutoff_k <= t:
        raise ShorError(f"cutoff_k должно лежать в [1, {t}], получено {cutoff_k}")

    F = state.amplitudes.shape[1]
    # Ось 0 — старший бит a, ось t-1 — младший, ось t — регистр функции
    psi = state.amplitudes.reshape((2,) * t + (F,)).copy()

    def axis(qubit: int) -> int:
        return t - 1 - qubit

    def index(**bits) -> tuple:
        idx = [slice(None)] * (t + 1)
        for qubit, bit in bits.values():
            idx[axis(qubit)] = bit
        return tuple(idx)

    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for j in range(t - 1, -1, -1):
        zero = psi[index(target=(j, 0))].copy()
        one = psi[index(target=(j, 1))].copy()
        psi[index(target=(j, 0))] = (zero + one) * inv_sqrt2
        psi[index(target=(j, 1))] = (zero - one) * inv_sqrt2

        for m in range(j - 1, -1, -1):
            d = j - m
            if d >= cutoff_k:
                break
            psi[index(target=(j, 1), control=(m, 1))] *= np.exp(1j * math.pi / (1 << d))

    order = list(range(t - 1, -1, -1)) + [t]
    psi = np.transpose(psi, order)
    return StateVector(amplitudes=np.ascontiguousarray(psi).reshape(1 << t, F), t=t, n=state.n)


def argument_distribution(state: StateVector) -> ArgumentDistribution:
    """Маргинальное распределение z на регистре аргумента."""
    probs = np.sum(np.abs(state.amplitudes) ** 2, axis=1)
    return ArgumentDistribution(probabilities=probs)


def sample_z(dist: ArgumentDistribution, rng_seed, count: int) -> List[int]:
    rng = np.random.default_rng(rng_seed)
    p = dist.probabilities / dist.probabilities.sum()
    return [int(z) for z in rng.choice(dist.T, size=count, p=p)]


# ===== КЛАССИЧЕСКАЯ ЧАСТЬ =====
def _convergent_denominators(z: int, T: int) -> List[int]:
    frac = Fraction(z, T)
    terms = []
    num, den = frac.numerator, frac.denominator
    while den:
        q = num // den
        terms.append(q)
        num, den = den, num - q * den

    denominators = []
    q_prev, q_cur = 1, 0   # q_{-2}, q_{-1}
    for a in terms:
        q_prev, q_cur = q_cur, a * q_cur + q_prev
        denominators.append(q_cur)
    return denominators


def _reduce_to_order(r: int, N: int, x: int) -> int:
    for p in _prime_factors(r):
        while r % p == 0 and mod_exp(x, r // p, N) == 1:
            r //= p
    return r


def extract_period(z: int, T: int, N: int, x: int) -> Optional[int]:
    """Период по измеренному z через подходящие дроби z/T. None — информации нет."""
    if not 0 <= z < T:
        raise ShorError(f"z={z} вне [0, {T})")
    if z == 0:
        return None

    best = None
    for q in _convergent_denominators(z, T):
        if q > N:
            break
        for multiple in range(1, CANDIDATE_MULTIPLES + 1):
            r = q * multiple
            if mod_exp(x, r, N) == 1 and (best is None or r < best):
                best = r
    return None if best is None else _reduce_to_order(best, N, x)


def run_order_finding(cfg: OrderFindingConfig, rng_seed, samples: int = DEFAULT_SAMPLES,
                      cutoff_k: Optional[int] = None) -> OrderFindingResult:
    """Полный прогон: состояние → КПФ → до samples измерений, пока не найдётся период."""
    dist = argument_distribution(apply_qft_argument(build_order_state(cfg), cutoff_k))
    z_values: List[int] = []
    for z in sample_z(dist, rng_seed, samples):
        z_values.append(z)
        period = extract_period(z, cfg.T, cfg.N, cfg.x)
        if period is not None:
            return OrderFindingResult(period=period, z_values=z_values)
    return OrderFindingResult(period=None, z_values=z_values)


def default_t(N: int) -> int:
    return 2 * math.ceil(math.log2(N))


def shor_factor(N: int, rng_seed=0, max_attempts: int = 10, t: Optional[int] = None,
                cutoff_k: Optional[int] = None, samples: int = DEFAULT_SAMPLES,
                budget: int = DEFAULT_AMPLITUDE_BUDGET) -> FactorOutcome:
    if not isinstance(N, int) or N < 3 or N % 2 == 0:
        raise ShorError(f"N={N} должно быть нечётным составным числом")
    if is_prime_power(N):
        raise ShorError(f"N={N} — простое число или степень простого")

    t = default_t(N) if t is None else t
    rng = np.random.default_rng(rng_seed)
    for attempt in range(1, max_attempts + 1):
        x = int(rng.integers(2, N))
        g = math.gcd(x, N)
        if g > 1:
            log.info("shor: попытка %d, x=%d уже делит N (gcd=%d)", attempt, x, g)
            return FactorPair(factors=tuple(sorted((g, N // g))), x=x, period=None, attempts=attempt)

        cfg = OrderFindingConfig(N=N, x=x, t=t, budget=budget)
        r = run_order_finding(cfg, [int(rng_seed), attempt], samples, cutoff_k).period
        if r is None or r % 2:
            log.debug("shor: попытка %d, x=%d — период %s не подходит", attempt, x, r)
            continue
        y = mod_exp(x, r // 2, N)
        if y == N - 1:
            log.debug("shor: попытка %d, x=%d — x^(r/2) ≡ -1", attempt, x)
            continue
        p = math.gcd(y - 1, N)
        if 1 < p < N:
            log.info("shor: попытка %d, x=%d, r=%d → %d × %d", attempt, x, r, p, N // p)
            return FactorPair(factors=tuple(sorted((p, N // p))), x=x, period=r, attempts=attempt)

    return FactorFailure(attempts=max_attempts)


# ===== ФАЙЛЫ =====
def write_histogram(path: Union[str, Path], dist: ArgumentDistribution) -> None:
    """CSV `z,probability` для построения пиков распределения."""
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["z", "probability"])
        for z, p in enumerate(dist.probabilities):
            writer.writerow([z, f"{float(p):.12g}"])
