import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinkey.dsp import BitStream
from twinkey.formats import (
    FormatError,
    read_bits,
    read_bits_any,
    read_bits_text,
    read_trace,
    write_bits,
    write_bits_text,
    write_trace,
    write_trace_csv,
)
from twinkey.synth import QuadratureTrace


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=300), st.sampled_from(["probe", "conjugate", "key"]),
       st.integers(0, 20))
def test_bits_round_trip(tmp_path_factory, bits, role, ch):
    d = tmp_path_factory.mktemp("bits")
    s = BitStream(np.array(bits, dtype=np.uint8), 250.0, 750.0, ch, role)
    write_bits(s, d / "s.twkb")
    assert read_bits(d / "s.twkb") == s
    assert read_bits_any(d / "s.twkb") == s
    write_bits_text(s, d / "s.txt")
    assert np.array_equal(read_bits_any(d / "s.txt").bits, s.bits)


def test_text_format(tmp_path):
    p = tmp_path / "b.txt"
    write_bits_text(BitStream([1, 0, 1]), p)
    assert p.read_text() == "101\n"
    p.write_text("10 1\n0\n")
    assert read_bits_text(p).bits.tolist() == [1, 0, 1, 0]
    p.write_text("10x1")
    with pytest.raises(FormatError):
        read_bits_text(p)
    p.write_text("\n")
    with pytest.raises(FormatError):
        read_bits_text(p)


def test_bits_corruption_detected(tmp_path):
    p = tmp_path / "s.twkb"
    write_bits(BitStream([1, 0, 1] * 10), p)
    data = p.read_bytes()
    p.write_bytes(data[:-1])
    with pytest.raises(FormatError):
        read_bits(p)
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        read_bits(p)
    p.write_bytes(data[:5])
    with pytest.raises(FormatError):
        read_bits(p)


def test_trace_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal(1000)
    t = QuadratureTrace(x, 16e6, 3, "conjugate", 2**63 + 5)
    write_trace(t, tmp_path / "t.twky")
    back = read_trace(tmp_path / "t.twky")
    assert np.array_equal(back.samples, x)
    assert (back.sample_rate_hz, back.channel_id, back.role, back.seed) == (16e6, 3, "conjugate", 2**63 + 5)


def test_trace_corruption_detected(tmp_path):
    p = tmp_path / "t.twky"
    write_trace(QuadratureTrace(np.zeros(10), 16e6, 0, "shot-noise", 0), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_trace(p)


def test_trace_csv(tmp_path):
    t = QuadratureTrace(np.array([0.5, -1.25, 2.0]), 16e6, 1, "probe", 0)
    write_trace_csv(t, tmp_path / "t.csv", max_samples=2)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["sample_index,value", "0,0.5", "1,-1.25"]
