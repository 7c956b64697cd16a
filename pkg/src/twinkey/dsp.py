"""Measurement post-processing: bandpass, slice integration, sign binning and
spectrum-analyzer style squeezing estimates."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

from twinkey.synth import QuadratureTrace

BIT_ROLES = ("probe", "conjugate", "key")

# reported when the difference quadrature has no power at all
FLOOR_DB = -150.0


@dataclass(frozen=True, eq=False)
class BitStream:
    bits: np.ndarray
    slice_ns: float = 500.0
    buffer_ns: float = 500.0
    source_channel: int = 0
    role: str = "probe"

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.size == 0:
            raise ValueError("bit stream must be a nonempty 1-D sequence")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("bit stream may only contain 0 and 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if self.role not in BIT_ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.slice_ns > 0 or self.buffer_ns < 0:
            raise ValueError("slice_ns must be positive and buffer_ns nonnegative")

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        if not isinstance(other, BitStream):
            return NotImplemented
        return (
            np.array_equal(self.bits, other.bits)
            and (self.slice_ns, self.buffer_ns, self.source_channel, self.role)
            == (other.slice_ns, other.buffer_ns, other.source_channel, other.role)
        )

    def with_bits(self, bits, **changes) -> "BitStream":
        meta = dict(
            slice_ns=self.slice_ns,
            buffer_ns=self.buffer_ns,
            source_channel=self.source_channel,
            role=self.role,
        )
        meta.update(changes)
        return BitStream(bits, **meta)


@dataclass(frozen=True)
class FilterSpec:
    """Linear-phase bandpass; ``transition_width_hz`` applies at the low edge and
    ``hi_transition_width_hz`` at the high edge."""

    f_lo_hz: float = 15e3
    f_hi_hz: float = 2e6
    transition_width_hz: float = 10e3
    stopband_attenuation_db: float = 60.0
    hi_transition_width_hz: float = 200e3

    def check(self, sample_rate_hz: float) -> None:
        if not 0 < self.f_lo_hz < self.f_hi_hz < sample_rate_hz / 2:
            raise ValueError(
                f"need 0 < f_lo < f_hi < Nyquist, got {self.f_lo_hz:g}, {self.f_hi_hz:g}, "
                f"fs={sample_rate_hz:g}"
            )
        if self.transition_width_hz <= 0 or self.hi_transition_width_hz <= 0:
            raise ValueError("transition widths must be positive")
        if self.f_lo_hz - self.transition_width_hz / 2 <= 0:
            raise ValueError("low transition band extends below DC")
        if self.f_hi_hz + self.hi_transition_width_hz / 2 >= sample_rate_hz / 2:
            raise ValueError("high transition band extends past Nyquist")
        if self.stopband_attenuation_db <= 21:
            raise ValueError("stopband attenuation must exceed 21 dB")


def _odd(n: int) -> int:
    return n if n % 2 else n + 1


@functools.lru_cache(maxsize=32)
def design_bandpass(spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    """Kaiser-windowed sinc taps: a highpass at ``f_lo`` cascaded with a
    lowpass at ``f_hi``, each sized for its own transition width."""
    spec.check(sample_rate_hz)
    nyq = sample_rate_hz / 2
    n_hp, beta_hp = signal.kaiserord(spec.stopband_attenuation_db, spec.transition_width_hz / nyq)
    n_lp, beta_lp = signal.kaiserord(spec.stopband_attenuation_db, spec.hi_transition_width_hz / nyq)
    hp = signal.firwin(_odd(n_hp), spec.f_lo_hz, window=("kaiser", beta_hp), pass_zero=False, fs=sample_rate_hz)
    lp = signal.firwin(_odd(n_lp), spec.f_hi_hz, window=("kaiser", beta_lp), fs=sample_rate_hz)
    taps = np.convolve(hp, lp)
    taps.setflags(write=False)
    return taps


def bandpass(trace: QuadratureTrace, spec: FilterSpec) -> QuadratureTrace:
    """Zero-delay bandpass.  The output keeps the input timeline; one filter
    length at each end of the valid region is marked invalid."""
    taps = design_bandpass(spec, trace.sample_rate_hz)
    n_taps = len(taps)
    if len(trace) < 3 * n_taps:
        raise ValueError(f"trace of {len(trace)} samples is shorter than 3 filter lengths ({3 * n_taps})")
    # odd tap count, so 'same' mode removes the (n_taps - 1)/2 group delay exactly
    out = signal.fftconvolve(trace.samples, taps, mode="same")
    start = trace.valid_start + n_taps
    stop = max(start, trace.valid_stop - n_taps)
    return QuadratureTrace(
        out,
        trace.sample_rate_hz,
        trace.channel_id,
        trace.role,
        trace.seed,
        valid_start=start,
        valid_stop=stop,
    )


def samples_per(duration_ns: float, sample_rate_hz: float) -> int:
    exact = duration_ns * 1e-9 * sample_rate_hz
    k = round(exact)
    if abs(exact - k) > 1e-6 * max(1.0, exact):
        raise ValueError(f"{duration_ns} ns is not a whole number of samples at {sample_rate_hz:g} Hz")
    return int(k)


def slice_count(n_valid: int, slice_samples: int, buffer_samples: int) -> int:
    """Number of complete slices in ``n_valid`` samples; a trailing slice
    needs no trailing buffer."""
    if n_valid < slice_samples:
        return 0
    return (n_valid - slice_samples) // (slice_samples + buffer_samples) + 1


def slice_integrate(trace: QuadratureTrace, slice_ns: float, buffer_ns: float) -> np.ndarray:
    """Sum the valid samples in alternating slice/buffer windows, starting at
    the first valid sample; buffer samples are dropped."""
    if not slice_ns > 0 or buffer_ns < 0:
        raise ValueError("slice_ns must be positive and buffer_ns nonnegative")
    k_slice = samples_per(slice_ns, trace.sample_rate_hz)
    k_buf = samples_per(buffer_ns, trace.sample_rate_hz)
    if k_slice < 1:
        raise ValueError("slice is shorter than one sample")
    x = trace.valid
    count = slice_count(len(x), k_slice, k_buf)
    if count == 0:
        raise ValueError("valid region holds no complete slice")
    period = k_slice + k_buf
    windows = np.zeros(count * period)
    used = (count - 1) * period + k_slice
    windows[:used] = x[:used]
    return windows.reshape(count, period)[:, :k_slice].sum(axis=1)


def binarize(
    values,
    *,
    slice_ns: float = 500.0,
    buffer_ns: float = 500.0,
    source_channel: int = 0,
    role: str = "probe",
) -> BitStream:
    """1 for strictly positive values, 0 for zero or negative."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to binarize")
    return BitStream((v > 0).astype(np.uint8), slice_ns, buffer_ns, source_channel, role)


def process_trace(
    trace: QuadratureTrace,
    spec: FilterSpec | None,
    slice_ns: float,
    buffer_ns: float,
    n_bits: int | None = None,
) -> tuple[BitStream, np.ndarray]:
    """Full filter -> integrate -> sign chain; returns the stream and the slice
    integrals it was cut from.  ``spec=None`` skips filtering; ``n_bits`` caps
    the stream length."""
    filtered = trace if spec is None else bandpass(trace, spec)
    values = slice_integrate(filtered, slice_ns, buffer_ns)
    if n_bits is not None:
        values = values[:n_bits]
    stream = binarize(
        values,
        slice_ns=slice_ns,
        buffer_ns=buffer_ns,
        source_channel=trace.channel_id,
        role=trace.role,
    )
    return stream, values


def psd_snl(samples: np.ndarray, sample_rate_hz: float, nperseg: int = 16384) -> tuple[np.ndarray, np.ndarray]:
    """Welch PSD scaled so white unit-variance noise reads 1 (shot noise)."""
    freqs, pxx = signal.welch(samples, fs=sample_rate_hz, nperseg=min(nperseg, len(samples)))
    return freqs, pxx * sample_rate_hz / 2


class SqueezingEstimate(NamedTuple):
    db: float
    at_floor: bool


def estimate_squeezing(
    probe: QuadratureTrace,
    conjugate: QuadratureTrace,
    shot: QuadratureTrace,
    analysis_freq_hz: float = 1e6,
    bandwidth_hz: float = 100e3,
    nperseg: int = 16384,
) -> SqueezingEstimate:
    """Noise of (probe - conjugate)/sqrt2 relative to the shot trace, averaged
    over ``bandwidth_hz`` around ``analysis_freq_hz``."""
    rates = {probe.sample_rate_hz, conjugate.sample_rate_hz, shot.sample_rate_hz}
    if len(rates) != 1 or not len(probe) == len(conjugate) == len(shot):
        raise ValueError("traces must share length and sample rate")
    rate = rates.pop()
    lo, hi = analysis_freq_hz - bandwidth_hz / 2, analysis_freq_hz + bandwidth_hz / 2
    if lo <= 0 or hi >= rate / 2:
        raise ValueError("analysis band lies outside the trace bandwidth")
    diff = (probe.samples - conjugate.samples) / math.sqrt(2.0)
    freqs, p_diff = psd_snl(diff, rate, nperseg)
    _, p_shot = psd_snl(shot.samples, rate, nperseg)
    band = (freqs >= lo) & (freqs <= hi)
    if not band.any():
        raise ValueError("analysis band narrower than the frequency resolution")
    shot_power = p_shot[band].mean()
    if shot_power <= 0:
        raise ValueError("shot-noise trace has no power in the analysis band")
    ratio = p_diff[band].mean() / shot_power
    if ratio <= 10 ** (FLOOR_DB / 10):
        return SqueezingEstimate(FLOOR_DB, True)
    return SqueezingEstimate(10 * math.log10(ratio), False)


def adjacent_bit_correlation(stream: BitStream) -> float:
    if len(stream) < 1000:
        raise ValueError("need at least 1000 bits")
    x = stream.bits.astype(float)
    if x.min() == x.max():
        raise ValueError("constant stream has no defined correlation")
    return float(np.corrcoef(x[:-1], x[1:])[0, 1])
