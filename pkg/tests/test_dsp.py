import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinkey.dsp import (
    FLOOR_DB,
    BitStream,
    FilterSpec,
    adjacent_bit_correlation,
    bandpass,
    binarize,
    design_bandpass,
    estimate_squeezing,
    process_trace,
    samples_per,
    slice_count,
    slice_integrate,
)
from twinkey.gaussian import ChannelModel, sign_agreement
from twinkey.synth import QuadratureTrace, SynthConfig, effective_correlation, synth_pair, synth_shot_noise

RATE = 16e6
SPEC = FilterSpec()
N_TAPS = len(design_bandpass(SPEC, RATE))


def trace(x, role="probe", rate=RATE):
    return QuadratureTrace(np.asarray(x, dtype=float), rate, 1, role, 0)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def tone(freq, n=200_000):
    t = np.arange(n) / RATE
    return np.sin(2 * np.pi * freq * t)


# -- filter ---------------------------------------------------------------------------


def test_filter_design_shape():
    taps = design_bandpass(SPEC, RATE)
    assert len(taps) % 2 == 1
    np.testing.assert_allclose(taps, taps[::-1], atol=1e-15)
    assert design_bandpass(SPEC, RATE) is taps


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(f_lo_hz=3e6).check(RATE)
    with pytest.raises(ValueError):
        FilterSpec(f_hi_hz=9e6).check(RATE)
    with pytest.raises(ValueError):
        FilterSpec(transition_width_hz=40e3).check(RATE)
    with pytest.raises(ValueError):
        FilterSpec(stopband_attenuation_db=10).check(RATE)
    with pytest.raises(ValueError):
        FilterSpec(hi_transition_width_hz=0).check(RATE)


def test_passband_tone_preserved():
    out = bandpass(trace(tone(1e6)), SPEC)
    assert rms(out.valid) == pytest.approx(1 / math.sqrt(2), rel=0.01)


def test_passband_tone_keeps_phase():
    x = tone(1e6)
    out = bandpass(trace(x), SPEC)
    s = slice(out.valid_start, out.valid_stop)
    np.testing.assert_allclose(out.samples[s], x[s], atol=0.01)


@pytest.mark.parametrize("freq", [1e3, 4e3])
def test_low_tone_rejected(freq):
    out = bandpass(trace(tone(freq, 400_000)), SPEC)
    assert 20 * math.log10(rms(out.valid) / (1 / math.sqrt(2))) <= -40


def test_high_tone_rejected():
    out = bandpass(trace(tone(3e6)), SPEC)
    assert 20 * math.log10(rms(out.valid) / (1 / math.sqrt(2))) <= -40


def test_dc_removed():
    rng = np.random.default_rng(0)
    out = bandpass(trace(5.0 + rng.standard_normal(100_000)), SPEC)
    assert abs(out.valid.mean()) < 0.01


def test_edges_marked_invalid():
    out = bandpass(trace(np.zeros(4 * N_TAPS)), SPEC)
    assert out.valid_start == N_TAPS
    assert out.valid_stop == 3 * N_TAPS
    assert len(out) == 4 * N_TAPS


def test_short_trace_rejected():
    with pytest.raises(ValueError, match="3 filter lengths"):
        bandpass(trace(np.zeros(3 * N_TAPS - 1)), SPEC)


@settings(max_examples=10, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_filter_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 3 * N_TAPS))
    lhs = bandpass(trace(a * x + b * y), SPEC).samples
    rhs = a * bandpass(trace(x), SPEC).samples + b * bandpass(trace(y), SPEC).samples
    scale = max(np.abs(lhs).max(), 1e-12)
    assert np.abs(lhs - rhs).max() <= 1e-9 * scale + 1e-12


# -- slicing ----------------------------------------------------------------------------


def test_samples_per():
    assert samples_per(500, RATE) == 8
    assert samples_per(0, RATE) == 0
    with pytest.raises(ValueError):
        samples_per(333, RATE)


def test_constant_trace_integrals():
    vals = slice_integrate(trace(np.full(1000, 0.25)), 500, 500)
    assert len(vals) == (1000 - 8) // 16 + 1
    np.testing.assert_allclose(vals, 8 * 0.25)


def test_alternating_trace_cancels():
    x = np.tile([1.0, -1.0], 500)
    np.testing.assert_allclose(slice_integrate(trace(x), 500, 500), 0.0)


def test_slice_windows_by_hand():
    x = np.arange(40.0)
    # 8-sample slices with 8-sample gaps: [0..7], [16..23], [32..39]
    vals = slice_integrate(trace(x), 500, 500)
    np.testing.assert_allclose(vals, [sum(range(0, 8)), sum(range(16, 24)), sum(range(32, 40))])
    assert len(slice_integrate(trace(x[:39]), 500, 500)) == 2


def test_slice_starts_at_first_valid_sample():
    x = np.zeros(64)
    x[10:18] = 1.0
    t = QuadratureTrace(x, RATE, 1, "probe", 0, valid_start=10, valid_stop=60)
    vals = slice_integrate(t, 500, 500)
    assert vals[0] == 8.0
    assert len(vals) == slice_count(50, 8, 8)


@given(st.integers(0, 200), st.integers(1, 12), st.integers(0, 12))
def test_slice_count_matches_brute_force(n, k, b):
    count, start = 0, 0
    while start + k <= n:
        count += 1
        start += k + b
    assert slice_count(n, k, b) == count


def test_default_duration_bit_count():
    n = SynthConfig(0.09, RATE).n_samples
    expected = (n - 2 * N_TAPS - 8) // 16 + 1
    rng = np.random.default_rng(1)
    out = bandpass(trace(rng.standard_normal(n)), SPEC)
    assert len(slice_integrate(out, 500, 500)) == expected
    # roughly 90,000 less about a thousand slices lost to the filter edges
    assert 88_500 < expected < 90_000


def test_slice_errors():
    with pytest.raises(ValueError):
        slice_integrate(trace(np.zeros(4)), 500, 500)
    with pytest.raises(ValueError):
        slice_integrate(trace(np.zeros(40)), 0, 500)
    with pytest.raises(ValueError):
        slice_integrate(trace(np.zeros(40)), 30, 500)


# -- binarize / bit streams -----------------------------------------------------------------


def test_binarize_rule():
    s = binarize([0.3, -0.2, 0.0])
    np.testing.assert_array_equal(s.bits, [1, 0, 0])
    assert binarize(np.full(5, 2.0)).bits.tolist() == [1] * 5
    with pytest.raises(ValueError):
        binarize([])


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v != 0), min_size=1, max_size=200))
def test_negation_flips_bits(values):
    a = binarize(values).bits
    b = binarize([-v for v in values]).bits
    assert np.all(a ^ b == 1)


def test_gaussian_ones_fraction():
    x = np.random.default_rng(2).standard_normal(90_000)
    assert abs(binarize(x).bits.mean() - 0.5) <= 0.01


def test_bitstream_validation_and_equality():
    with pytest.raises(ValueError):
        BitStream([])
    with pytest.raises(ValueError):
        BitStream([0, 2])
    with pytest.raises(ValueError):
        BitStream([0, 1], role="share")
    with pytest.raises(ValueError):
        BitStream([0, 1], slice_ns=0)
    a = BitStream([0, 1, 1])
    assert a == BitStream(np.array([0, 1, 1]))
    assert a != BitStream([0, 1, 1], source_channel=2)
    assert a != BitStream([0, 1, 0])
    b = a.with_bits([1, 1, 1], role="key")
    assert b.role == "key" and b.slice_ns == a.slice_ns
    with pytest.raises(ValueError):
        a.bits[0] = 1


def test_adjacent_correlation():
    alt = BitStream(np.tile([0, 1], 1000))
    assert adjacent_bit_correlation(alt) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        adjacent_bit_correlation(BitStream(np.ones(2000, dtype=np.uint8)))
    with pytest.raises(ValueError):
        adjacent_bit_correlation(BitStream([0, 1] * 10))


# -- end-to-end measurement chain ---------------------------------------------------------------


@pytest.fixture(scope="module")
def channel2():
    model = ChannelModel.calibrated(-2.3, 0.887)
    cfg = SynthConfig(0.091, RATE, [model], master_seed=99)
    probe, conj = synth_pair(model, cfg, 1)
    return model, probe, conj, synth_shot_noise(cfg)


def test_process_trace_caps_length(channel2):
    _, probe, _, _ = channel2
    stream, values = process_trace(probe, SPEC, 500, 500, n_bits=1000)
    assert len(stream) == len(values) == 1000
    assert stream.role == "probe" and stream.source_channel == 1
    full, _ = process_trace(probe, SPEC, 500, 500)
    assert np.array_equal(full.bits[:1000], stream.bits)
    raw, _ = process_trace(probe, None, 500, 500)
    assert len(raw) == slice_count(len(probe), 8, 8)


def test_pipeline_agreement_matches_effective_rho(channel2):
    model, probe, conj, _ = channel2
    p, _ = process_trace(probe, SPEC, 500, 500, 90_000)
    c, _ = process_trace(conj, SPEC, 500, 500, 90_000)
    measured = np.mean(p.bits == c.bits)
    rho = effective_correlation(model, RATE, design_bandpass(SPEC, RATE), slice_samples=8)
    assert abs(measured - sign_agreement(rho)) < 0.015
    assert abs(measured - 0.887) < 0.015


def test_pipeline_bit_statistics(channel2):
    _, probe, conj, _ = channel2
    for t in (probe, conj):
        s, _ = process_trace(t, SPEC, 500, 500, 90_000)
        assert 0.49 <= s.bits.mean() <= 0.51
        assert abs(adjacent_bit_correlation(s)) < 0.01


def test_squeezing_estimate_channel(channel2):
    _, probe, conj, shot = channel2
    est = estimate_squeezing(probe, conj, shot)
    assert not est.at_floor
    assert est.db == pytest.approx(-2.3, abs=0.3)


def test_squeezing_estimate_vacuum():
    model = ChannelModel(1.0, 1.0)
    cfg = SynthConfig(0.05, RATE, [model], master_seed=4)
    p, c = synth_pair(model, cfg, 1)
    assert estimate_squeezing(p, c, synth_shot_noise(cfg)).db == pytest.approx(0.0, abs=0.3)


def test_squeezing_estimate_floor(channel2):
    _, probe, _, shot = channel2
    est = estimate_squeezing(probe, probe, shot)
    assert est.at_floor and est.db == FLOOR_DB


def test_squeezing_estimate_errors(channel2):
    _, probe, conj, shot = channel2
    with pytest.raises(ValueError):
        estimate_squeezing(probe, conj, trace(shot.samples[:-1], "shot-noise"))
    with pytest.raises(ValueError):
        estimate_squeezing(probe, conj, shot, analysis_freq_hz=7.99e6)
