"""On-disk formats for traces and bit streams.

Trace container (little-endian)::

    magic "TWKY" | u16 version | u16 role | i32 channel_id | f64 sample_rate_hz
    | u64 seed | u64 sample count | count x f64 samples

Bit stream container (little-endian header, then bits packed MSB first)::

    magic "TWKB" | u16 version | u16 role | i32 channel | f64 slice_ns
    | f64 buffer_ns | u64 bit count | ceil(count / 8) bytes

Bit streams can also be written as plain '0'/'1' text for external testers.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from twinkey.dsp import BIT_ROLES, BitStream
from twinkey.synth import ROLES, QuadratureTrace

TRACE_MAGIC = b"TWKY"
BITS_MAGIC = b"TWKB"
VERSION = 1

_TRACE_HEADER = struct.Struct("<4sHHidQQ")
_BITS_HEADER = struct.Struct("<4sHHiddQ")


class FormatError(ValueError):
    pass


def write_trace(trace: QuadratureTrace, path) -> None:
    header = _TRACE_HEADER.pack(
        TRACE_MAGIC,
        VERSION,
        ROLES.index(trace.role),
        trace.channel_id,
        trace.sample_rate_hz,
        trace.seed,
        len(trace),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(trace.samples.astype("<f8").tobytes())


def read_trace(path) -> QuadratureTrace:
    data = Path(path).read_bytes()
    if len(data) < _TRACE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, role, channel, rate, seed, count = _TRACE_HEADER.unpack_from(data)
    if magic != TRACE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if role >= len(ROLES):
        raise FormatError(f"{path}: unknown role code {role}")
    body = data[_TRACE_HEADER.size :]
    if len(body) != 8 * count:
        raise FormatError(f"{path}: expected {count} samples, found {len(body) // 8}")
    samples = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return QuadratureTrace(samples, rate, channel, ROLES[role], seed)


def write_trace_csv(trace: QuadratureTrace, path, max_samples: int | None = None) -> None:
    samples = trace.samples if max_samples is None else trace.samples[:max_samples]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "value"])
        for i, v in enumerate(samples):
            w.writerow([i, repr(float(v))])


def write_bits(stream: BitStream, path) -> None:
    header = _BITS_HEADER.pack(
        BITS_MAGIC,
        VERSION,
        BIT_ROLES.index(stream.role),
        stream.source_channel,
        stream.slice_ns,
        stream.buffer_ns,
        len(stream),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.packbits(stream.bits, bitorder="big").tobytes())


def read_bits(path) -> BitStream:
    data = Path(path).read_bytes()
    if len(data) < _BITS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, role, channel, slice_ns, buffer_ns, count = _BITS_HEADER.unpack_from(data)
    if magic != BITS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if role >= len(BIT_ROLES):
        raise FormatError(f"{path}: unknown role code {role}")
    body = np.frombuffer(data, dtype=np.uint8, offset=_BITS_HEADER.size)
    if len(body) != (count + 7) // 8:
        raise FormatError(f"{path}: expected {(count + 7) // 8} payload bytes, found {len(body)}")
    bits = np.unpackbits(body, count=count, bitorder="big")
    return BitStream(bits, slice_ns, buffer_ns, channel, BIT_ROLES[role])


def write_bits_text(stream: BitStream, path) -> None:
    Path(path).write_text((stream.bits + ord("0")).astype(np.uint8).tobytes().decode() + "\n")


def read_bits_text(path) -> BitStream:
    text = Path(path).read_text()
    chars = [c for c in text if not c.isspace()]
    bad = set(chars) - {"0", "1"}
    if bad:
        raise FormatError(f"{path}: unexpected characters {sorted(bad)!r}")
    if not chars:
        raise FormatError(f"{path}: no bits")
    return BitStream(np.frombuffer("".join(chars).encode(), dtype=np.uint8) - ord("0"))


def read_bits_any(path) -> BitStream:
    """Packed container if the file starts with the container magic,
    otherwise '0'/'1' text."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BITS_MAGIC:
        return read_bits(path)
    return read_bits_text(path)
