import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from twinkey.randtests import (
    ALPHA,
    TEST_NAMES,
    NotApplicable,
    approximate_entropy_test,
    battery,
    block_frequency_test,
    cumulative_sums_test,
    dft_statistic,
    dft_test,
    frequency_statistic,
    frequency_test,
    longest_run_test,
    non_overlapping_template_test,
    runs_test,
    serial_test,
)

# first 100 binary digits of the published reference sequence
PI100 = (
    "1100100100001111110110101010001000100001011010001100001000110100"
    "110001001100011001100010100010111000"
)
LONGEST128 = (
    "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111"
    "001100111001101101100010110010"
)


def bits(s):
    return np.array([int(c) for c in s], dtype=np.uint8)


# -- published reference vectors ------------------------------------------------------


def test_reference_vector_lengths():
    assert len(PI100) == 100
    assert len(LONGEST128) == 128


def test_frequency_reference():
    assert frequency_test(bits("1011010101"), check_length=False) == pytest.approx(0.527089, abs=1e-6)
    assert frequency_test(bits(PI100)) == pytest.approx(0.109599, abs=1e-6)


def test_block_frequency_reference():
    assert block_frequency_test(bits("0110011010"), 3, check_length=False)[1] == pytest.approx(0.801252, abs=1e-6)
    assert block_frequency_test(bits(PI100), 10, check_length=False)[1] == pytest.approx(0.706438, abs=1e-6)


def test_cumulative_sums_reference():
    assert cumulative_sums_test(bits("1011010111"), check_length=False)[1] == pytest.approx(0.4116588, abs=1e-6)
    assert cumulative_sums_test(bits(PI100))[1] == pytest.approx(0.219194, abs=1e-6)
    assert cumulative_sums_test(bits(PI100), reverse=True)[1] == pytest.approx(0.114866, abs=1e-6)


def test_runs_reference():
    v, p = runs_test(bits("1001101011"), check_length=False)
    assert v == 7
    assert p == pytest.approx(0.147232, abs=1e-6)
    assert runs_test(bits(PI100))[1] == pytest.approx(0.500798, abs=1e-6)


def test_longest_run_reference():
    chi2, p = longest_run_test(bits(LONGEST128))
    assert chi2 == pytest.approx(4.882605, abs=1e-6)
    assert p == pytest.approx(0.180598, abs=1e-6)


def test_approximate_entropy_reference():
    assert approximate_entropy_test(bits("0100110101"), 3, check_length=False)[1] == pytest.approx(0.261961, abs=1e-6)
    assert approximate_entropy_test(bits(PI100), 2, check_length=False)[1] == pytest.approx(0.235301, abs=1e-6)


def test_serial_reference():
    (_, p1), (_, p2) = serial_test(bits("0011011101"), 3, check_length=False)
    assert p1 == pytest.approx(0.808792, abs=1e-6)
    assert p2 == pytest.approx(0.670320, abs=1e-6)


def test_non_overlapping_template_reference():
    _, p = non_overlapping_template_test(bits("10100100101110010110"), "001", 2, check_length=False)
    assert p == pytest.approx(0.344154, abs=1e-6)


def test_dft_statistic_reference():
    # published worked examples quote the under-threshold count directly
    d, p = dft_statistic(4, 10)
    assert d == pytest.approx(-2.176429, abs=1e-6)
    assert p == pytest.approx(0.029523, abs=1e-6)
    d, p = dft_statistic(46, 100)
    assert d == pytest.approx(-1.376494, abs=1e-6)
    assert p == pytest.approx(0.168669, abs=1e-6)


def direct_dft_count(b):
    """Moduli under the 95% threshold from an O(n^2) DFT sum."""
    n = len(b)
    x = 2.0 * b - 1
    k = np.arange(n // 2)[:, None]
    j = np.arange(n)[None, :]
    moduli = np.abs((x[None, :] * np.exp(-2j * np.pi * k * j / n)).sum(axis=1))
    return int(np.count_nonzero(moduli < math.sqrt(math.log(20) * n)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dft_counting_matches_direct_sum(seed):
    b = np.random.default_rng(seed).integers(0, 2, 1000).astype(np.uint8)
    assert dft_test(b) == pytest.approx(dft_statistic(direct_dft_count(b), len(b)), abs=1e-12)


# -- trivial and decisive cases -----------------------------------------------------------


def test_balanced_frequency():
    assert frequency_test(np.array([1] * 50 + [0] * 50, dtype=np.uint8)) == 1.0


def test_all_ones_frequency():
    p = frequency_test(np.ones(100, dtype=np.uint8))
    assert p == pytest.approx(erfc(100 / math.sqrt(200)), rel=1e-9)
    assert p < 1e-22


def test_counter_sequence_fails():
    report = battery(np.tile([0, 1], 45_000))
    by_name = {r.test_name: r for r in report.results}
    assert not by_name["runs"].passed
    assert not by_name["serial_1"].passed
    assert not by_name["approximate_entropy"].passed
    assert report.n_failed >= 4


def test_all_zero_stream_fails():
    report = battery(np.zeros(90_000, dtype=np.uint8))
    assert len(report.applicable) == 11
    assert report.n_failed >= 8


def test_short_input_not_applicable():
    report = battery(np.random.default_rng(3).integers(0, 2, 100))
    assert [r.test_name for r in report.results] == list(TEST_NAMES)
    na = [r.test_name for r in report.results if not r.applicable]
    assert {"block_frequency", "longest_run", "dft", "approximate_entropy", "serial_1", "serial_2",
            "non_overlapping_template"} == set(na)
    assert all(r.passed is None and r.note for r in report.results if not r.applicable)


def test_length_guards():
    with pytest.raises(NotApplicable):
        frequency_test(np.ones(99, dtype=np.uint8))
    with pytest.raises(NotApplicable):
        dft_test(np.ones(999, dtype=np.uint8))
    with pytest.raises(NotApplicable):
        non_overlapping_template_test(np.ones(20_000, dtype=np.uint8))
    with pytest.raises(ValueError):
        battery([])
    with pytest.raises(ValueError):
        battery([0, 1, 2])


def test_runs_pretest_failure():
    assert runs_test(np.array([1] * 75 + [0] * 25, dtype=np.uint8))[1] == 0.0


def test_frequency_statistic():
    s, p = frequency_statistic(bits("1" * 60 + "0" * 40))
    assert s == pytest.approx(2.0)
    assert p == pytest.approx(erfc(2 / math.sqrt(2)))


# -- properties ------------------------------------------------------------------------------


def test_report_rows():
    report = battery(np.random.default_rng(4).integers(0, 2, 90_000), stream="x")
    rows = report.rows()
    assert len(rows) == 11 and rows[0]["stream"] == "x"
    assert report.n_passed + report.n_failed == len(report.applicable) == 11
    assert report.n_bits == 90_000


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_battery_deterministic(seed):
    b = np.random.default_rng(seed).integers(0, 2, 30_000)
    r1, r2 = battery(b), battery(b.copy())
    assert [(r.statistic, r.p_value) for r in r1.results] == [(r.statistic, r.p_value) for r in r2.results]


@pytest.fixture(scope="module")
def ideal_pass_rates():
    rng = np.random.default_rng(2024)
    passed = np.zeros(len(TEST_NAMES))
    n_streams = 1000
    for _ in range(n_streams):
        report = battery(rng.integers(0, 2, 25_000, dtype=np.uint8))
        assert len(report.applicable) == len(TEST_NAMES)
        passed += [bool(r.passed) for r in report.results]
    return dict(zip(TEST_NAMES, passed / n_streams))


@pytest.mark.parametrize("name", TEST_NAMES)
def test_ideal_streams_pass_rate(ideal_pass_rates, name):
    assert 0.97 <= ideal_pass_rates[name] <= 1.0
    assert ALPHA == 0.01
