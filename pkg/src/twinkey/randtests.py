"""Short-sequence members of the NIST SP 800-22 randomness battery.

Eleven p-values per stream: frequency, block frequency, cumulative sums
(forward and reverse), runs, longest run of ones, spectral (DFT),
approximate entropy, serial (two statistics) and non-overlapping template
matching.  The remaining suite members need at least 10^6 bits and are not
included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import norm

ALPHA = 0.01

BLOCK_FREQUENCY_M = 900
PATTERN_M = 5
TEMPLATE = "000000001"
TEMPLATE_BLOCKS = 8

TEST_NAMES = (
    "frequency",
    "block_frequency",
    "cumulative_sums_forward",
    "cumulative_sums_reverse",
    "runs",
    "longest_run",
    "dft",
    "approximate_entropy",
    "serial_1",
    "serial_2",
    "non_overlapping_template",
)


class NotApplicable(ValueError):
    """Sequence too short for the test's approximations to hold."""


def _as_bits(bits) -> np.ndarray:
    if isinstance(bits, str):
        bits = [int(c) for c in bits if c in "01"]
    b = np.asarray(getattr(bits, "bits", bits), dtype=np.int64)
    if b.ndim != 1:
        raise ValueError("bits must be one-dimensional")
    if b.size and (b.min() < 0 or b.max() > 1):
        raise ValueError("bits may only contain 0 and 1")
    return b


def _require(n: int, minimum: int, name: str, check: bool = True) -> None:
    if check and n < minimum:
        raise NotApplicable(f"{name} needs at least {minimum} bits, got {n}")


def frequency_statistic(bits) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    s_obs = abs(int(np.sum(2 * b - 1))) / math.sqrt(n)
    return s_obs, float(erfc(s_obs / math.sqrt(2)))


def frequency_test(bits, *, check_length: bool = True) -> float:
    b = _as_bits(bits)
    _require(len(b), 100, "frequency", check_length)
    return frequency_statistic(b)[1]


def block_frequency_test(bits, m: int = BLOCK_FREQUENCY_M, *, check_length: bool = True) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    _require(n, max(100, m), "block_frequency", check_length)
    n_blocks = n // m
    pi = b[: n_blocks * m].reshape(n_blocks, m).mean(axis=1)
    chi2 = 4.0 * m * float(np.sum((pi - 0.5) ** 2))
    return chi2, float(gammaincc(n_blocks / 2, chi2 / 2))


def cumulative_sums_test(bits, reverse: bool = False, *, check_length: bool = True) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    _require(n, 100, "cumulative_sums", check_length)
    x = 2 * b - 1
    if reverse:
        x = x[::-1]
    z = int(np.max(np.abs(np.cumsum(x))))
    sqrt_n = math.sqrt(n)
    # summation limits use the reference implementation's integer arithmetic
    q = n // z
    k1 = np.arange(math.trunc((-q + 1) / 4), math.trunc((q - 1) / 4) + 1)
    k2 = np.arange(math.trunc((-q - 3) / 4), math.trunc((q - 1) / 4) + 1)
    s1 = np.sum(norm.cdf((4 * k1 + 1) * z / sqrt_n) - norm.cdf((4 * k1 - 1) * z / sqrt_n))
    s2 = np.sum(norm.cdf((4 * k2 + 3) * z / sqrt_n) - norm.cdf((4 * k2 + 1) * z / sqrt_n))
    return float(z), float(min(1.0, max(0.0, 1.0 - s1 + s2)))


def runs_test(bits, *, check_length: bool = True) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    _require(n, 100, "runs", check_length)
    pi = b.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        # frequency pre-test failed; runs test is not run
        return float("nan"), 0.0
    v_obs = 1 + int(np.count_nonzero(b[1:] != b[:-1]))
    num = abs(v_obs - 2 * n * pi * (1 - pi))
    den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    return float(v_obs), float(erfc(num / den))


# (block length M, bin edges [lowest, highest], class probabilities)
_LONGEST_RUN_TABLE = (
    (750000, 10000, (10, 16), (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6272, 128, (4, 9), (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, (1, 4), (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    """Longest run of ones in each row."""
    n_rows, m = blocks.shape
    padded = np.zeros((n_rows, m + 2), dtype=np.int8)
    padded[:, 1:-1] = blocks
    d = np.diff(padded, axis=1)
    best = np.zeros(n_rows, dtype=np.int64)
    rows_s, cols_s = np.nonzero(d == 1)
    _, cols_e = np.nonzero(d == -1)
    # starts and ends pair up in row-major order
    np.maximum.at(best, rows_s, cols_e - cols_s)
    return best


def longest_run_test(bits) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    _require(n, 128, "longest_run")
    for min_n, m, (lo, hi), probs in _LONGEST_RUN_TABLE:
        if n >= min_n:
            break
    n_blocks = n // m
    runs = _longest_runs(b[: n_blocks * m].reshape(n_blocks, m))
    counts = np.bincount(np.clip(runs, lo, hi) - lo, minlength=hi - lo + 1)
    expected = n_blocks * np.asarray(probs)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    k = len(probs) - 1
    return chi2, float(gammaincc(k / 2, chi2 / 2))


def dft_test(bits, *, check_length: bool = True) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    _require(n, 1000, "dft", check_length)
    modulus = np.abs(np.fft.fft(2 * b - 1))[: n // 2]
    threshold = math.sqrt(math.log(1 / 0.05) * n)
    return dft_statistic(int(np.count_nonzero(modulus < threshold)), n)


def dft_statistic(n_below: int, n: int) -> tuple[float, float]:
    """(d, p) from the number of DFT moduli under the 95% threshold."""
    n0 = 0.95 * n / 2
    d = (n_below - n0) / math.sqrt(n * 0.95 * 0.05 / 4)
    return d, float(erfc(abs(d) / math.sqrt(2)))


def _pattern_counts(b: np.ndarray, m: int) -> np.ndarray:
    """Overlapping m-bit pattern counts with wraparound."""
    n = len(b)
    if m == 0:
        return np.array([n])
    ext = np.concatenate([b, b[: m - 1]])
    idx = np.zeros(n, dtype=np.int64)
    for j in range(m):
        idx = (idx << 1) | ext[j : j + n]
    return np.bincount(idx, minlength=2**m)


def approximate_entropy_test(bits, m: int = PATTERN_M, *, check_length: bool = True) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    if check_length and m >= math.floor(math.log2(n)) - 5:
        raise NotApplicable(f"approximate_entropy with m={m} needs more than {n} bits")

    def phi(k):
        c = _pattern_counts(b, k) / n
        c = c[c > 0]
        return float(np.sum(c * np.log(c)))

    ap_en = phi(m) - phi(m + 1)
    chi2 = 2 * n * (math.log(2) - ap_en)
    return chi2, float(gammaincc(2 ** (m - 1), chi2 / 2))


def serial_test(
    bits, m: int = PATTERN_M, *, check_length: bool = True
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Returns ((del_psi2, p1), (del2_psi2, p2))."""
    b = _as_bits(bits)
    n = len(b)
    if check_length and m >= math.floor(math.log2(n)) - 2:
        raise NotApplicable(f"serial with m={m} needs more than {n} bits")

    def psi2(k):
        if k <= 0:
            return 0.0
        c = _pattern_counts(b, k)
        return (2**k / n) * float(np.sum(c.astype(float) ** 2)) - n

    p_m, p_m1, p_m2 = psi2(m), psi2(m - 1), psi2(m - 2)
    d1 = p_m - p_m1
    d2 = p_m - 2 * p_m1 + p_m2
    return (d1, float(gammaincc(2 ** (m - 2), d1 / 2))), (d2, float(gammaincc(2 ** (m - 3), d2 / 2)))


def non_overlapping_template_test(
    bits, template: str = TEMPLATE, n_blocks: int = TEMPLATE_BLOCKS, *, check_length: bool = True
) -> tuple[float, float]:
    b = _as_bits(bits)
    n = len(b)
    m = len(template)
    block = n // n_blocks
    mu = (block - m + 1) / 2**m
    # chi-square needs roughly five expected hits per block
    if check_length and mu < 5:
        raise NotApplicable(f"non_overlapping_template needs more than {n} bits")
    tmpl = np.array([int(c) for c in template], dtype=np.int64)
    key = int("".join(map(str, tmpl)), 2)
    hits = []
    for j in range(n_blocks):
        seg = b[j * block : (j + 1) * block]
        idx = np.zeros(block - m + 1, dtype=np.int64)
        for i in range(m):
            idx = (idx << 1) | seg[i : i + block - m + 1]
        count, next_free = 0, 0
        for pos in np.flatnonzero(idx == key):
            if pos >= next_free:
                count += 1
                next_free = pos + m
        hits.append(count)
    w = np.asarray(hits, dtype=float)
    var = block * (1 / 2**m - (2 * m - 1) / 2 ** (2 * m))
    chi2 = float(np.sum((w - mu) ** 2) / var)
    return chi2, float(gammaincc(n_blocks / 2, chi2 / 2))


@dataclass(frozen=True)
class TestResult:
    test_name: str
    statistic: float
    p_value: float | None
    applicable: bool = True
    note: str = ""

    @property
    def passed(self) -> bool | None:
        if not self.applicable:
            return None
        return self.p_value >= ALPHA


@dataclass
class RandomnessReport:
    results: list[TestResult]
    n_bits: int
    metadata: dict = field(default_factory=dict)

    @property
    def applicable(self) -> list[TestResult]:
        return [r for r in self.results if r.applicable]

    @property
    def n_passed(self) -> int:
        return sum(1 for r in self.applicable if r.passed)

    @property
    def n_failed(self) -> int:
        return len(self.applicable) - self.n_passed

    def rows(self) -> list[dict]:
        return [
            dict(
                self.metadata,
                test=r.test_name,
                statistic=r.statistic,
                p_value=r.p_value,
                applicable=r.applicable,
                passed=r.passed,
                note=r.note,
            )
            for r in self.results
        ]


def _single(name, fn, b):
    try:
        stat, p = fn(b)
    except NotApplicable as exc:
        return [TestResult(name, float("nan"), None, applicable=False, note=str(exc))]
    return [TestResult(name, float(stat), float(p))]


def battery(bits, **metadata) -> RandomnessReport:
    """Run all eleven tests; tests whose length requirements are not met are
    reported as not applicable rather than failed."""
    b = _as_bits(bits)
    if len(b) == 0:
        raise ValueError("empty bit sequence")
    results: list[TestResult] = []
    results += _single("frequency", _frequency_checked, b)
    results += _single("block_frequency", block_frequency_test, b)
    results += _single("cumulative_sums_forward", cumulative_sums_test, b)
    results += _single("cumulative_sums_reverse", lambda x: cumulative_sums_test(x, reverse=True), b)
    results += _single("runs", runs_test, b)
    results += _single("longest_run", longest_run_test, b)
    results += _single("dft", dft_test, b)
    results += _single("approximate_entropy", approximate_entropy_test, b)
    try:
        (s1, p1), (s2, p2) = serial_test(b)
        results += [TestResult("serial_1", s1, p1), TestResult("serial_2", s2, p2)]
    except NotApplicable as exc:
        results += [TestResult(name, float("nan"), None, False, str(exc)) for name in ("serial_1", "serial_2")]
    results += _single("non_overlapping_template", non_overlapping_template_test, b)
    return RandomnessReport(results, len(b), dict(metadata))


def _frequency_checked(b):
    _require(len(b), 100, "frequency")
    return frequency_statistic(b)
