"""Seeded synthesis of balanced-homodyne quadrature traces.

Each probe/conjugate pair is built from two independent Gaussian processes,
one for the sum and one for the difference quadrature, spectrally shaped in
the frequency domain.  A white trace with unit per-sample variance has a flat
power spectral density equal to the shot-noise level, so every PSD below is
in shot-noise units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from twinkey.gaussian import ChannelModel

ROLES = ("probe", "conjugate", "shot-noise")

# spawn-key prefix of the shot-noise substream; channel ids stay below it
_SHOT_KEY = 2**32
_SUM, _DIFF, _TECH = 0, 1, 2


@dataclass(frozen=True, eq=False)
class QuadratureTrace:
    """Sampled detector output in shot-noise-normalized units.

    ``valid_start``/``valid_stop`` delimit the samples usable downstream;
    filtering narrows them to exclude edge transients.
    """

    samples: np.ndarray
    sample_rate_hz: float
    channel_id: int
    role: str
    seed: int
    valid_start: int = 0
    valid_stop: int | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        stop = len(samples) if self.valid_stop is None else self.valid_stop
        if not 0 <= self.valid_start <= stop <= len(samples):
            raise ValueError("invalid valid-sample window")
        object.__setattr__(self, "valid_stop", stop)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def valid(self) -> np.ndarray:
        return self.samples[self.valid_start : self.valid_stop]


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float
    sample_rate_hz: float = 16e6
    channels: tuple[ChannelModel, ...] = field(default_factory=tuple)
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        for model in self.channels:
            _check_aliasing(model, self.sample_rate_hz)

    @property
    def n_samples(self) -> int:
        # round first so 0.091 s * 16 MS/s is not bumped up by float error
        return math.ceil(round(self.duration_s * self.sample_rate_hz, 6))


def _check_aliasing(model: ChannelModel, sample_rate_hz: float) -> None:
    if sample_rate_hz < 2 * model.squeeze_band_hi_hz:
        raise ValueError(
            f"sample rate {sample_rate_hz:g} Hz aliases the squeezing band edge "
            f"{model.squeeze_band_hi_hz:g} Hz"
        )


def _seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=key)


def _rng(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(ss))


def _trace_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def joint_psd(model: ChannelModel, freqs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PSD envelopes (sum, difference, common technical) at ``freqs``."""
    f = np.abs(np.asarray(freqs, dtype=float))
    lo, hi, width = model.squeeze_band_lo_hz, model.squeeze_band_hi_hz, model.relax_width_hz
    # 1 inside the band, ramps to 0 over relax_width above it, 0 below lo
    weight = np.where(f < lo, 0.0, np.clip(1.0 - (f - hi) / width, 0.0, 1.0))
    v_sum = 1.0 + (model.v_plus - 1.0) * weight
    v_diff = 1.0 + (model.v_minus - 1.0) * weight
    if model.technical_corner_hz > 0:
        # single-pole lobe: full level at DC, -3 dB at the corner
        tech = 10.0 ** (model.technical_noise_db / 10.0) / (1.0 + (f / model.technical_corner_hz) ** 2)
    else:
        tech = np.zeros_like(f)
    return v_sum, v_diff, tech


def _shaped(rng: np.random.Generator, n: int, psd: np.ndarray) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    spectrum *= np.sqrt(psd)
    return np.fft.irfft(spectrum, n)


def synth_pair(model: ChannelModel, cfg: SynthConfig, channel_id: int) -> tuple[QuadratureTrace, QuadratureTrace]:
    """Probe and conjugate amplitude-quadrature traces for one channel.

    probe = (s + d)/sqrt2 + t and conjugate = (s - d)/sqrt2 + t, where s and
    d carry the sum and difference PSDs and t is common technical noise.
    """
    _check_aliasing(model, cfg.sample_rate_hz)
    if not 0 <= channel_id < _SHOT_KEY:
        raise ValueError(f"channel_id out of range: {channel_id}")
    n = cfg.n_samples
    freqs = np.fft.rfftfreq(n, 1.0 / cfg.sample_rate_hz)
    v_sum, v_diff, tech = joint_psd(model, freqs)

    s = _shaped(_rng(_seed_sequence(cfg.master_seed, channel_id, _SUM)), n, v_sum)
    d = _shaped(_rng(_seed_sequence(cfg.master_seed, channel_id, _DIFF)), n, v_diff)
    probe = (s + d) / math.sqrt(2.0)
    conjugate = (s - d) / math.sqrt(2.0)
    if tech.any():
        t = _shaped(_rng(_seed_sequence(cfg.master_seed, channel_id, _TECH)), n, tech)
        probe += t
        conjugate += t

    seed = _trace_seed(_seed_sequence(cfg.master_seed, channel_id))
    return (
        QuadratureTrace(probe, cfg.sample_rate_hz, channel_id, "probe", seed),
        QuadratureTrace(conjugate, cfg.sample_rate_hz, channel_id, "conjugate", seed),
    )


def synth_shot_noise(cfg: SynthConfig) -> QuadratureTrace:
    """Unit-PSD white reference trace, independent of every channel."""
    ss = _seed_sequence(cfg.master_seed, _SHOT_KEY, 0)
    samples = _rng(ss).standard_normal(cfg.n_samples)
    return QuadratureTrace(samples, cfg.sample_rate_hz, 0, "shot-noise", _trace_seed(ss))


def cross_channel_independence_check(traces: Sequence[QuadratureTrace]) -> np.ndarray:
    """Pearson correlation between every pair of traces."""
    if len(traces) < 2:
        raise ValueError("need at least two traces")
    n = len(traces[0])
    if any(len(t) != n for t in traces):
        raise ValueError("traces differ in length")
    return np.corrcoef(np.vstack([t.samples for t in traces]))


def effective_correlation(
    model: ChannelModel,
    sample_rate_hz: float,
    taps: np.ndarray | None = None,
    slice_samples: int = 1,
    n_freq: int = 2**21,
) -> float:
    """Probe/conjugate correlation of slice integrals after filtering.

    Weights the joint PSDs by the filter and slice-sum power responses and
    integrates over frequency.  With a flat in-band model and no leakage this
    equals ``model.rho``.
    """
    freqs = np.fft.rfftfreq(n_freq, 1.0 / sample_rate_hz)
    v_sum, v_diff, tech = joint_psd(model, freqs)
    gain = np.ones_like(freqs)
    if taps is not None:
        gain = np.abs(np.fft.rfft(taps, n_freq)) ** 2
    box = np.abs(np.fft.rfft(np.ones(slice_samples), n_freq)) ** 2
    w = gain * box
    cov = np.sum(w * ((v_sum - v_diff) / 2 + tech))
    var = np.sum(w * ((v_sum + v_diff) / 2 + tech))
    return float(cov / var)
