"""Run configuration: a flat INI file with one section per channel.

::

    [run]
    seed = 20140101
    duration_s = 0.091
    ...

    [filter]
    enabled = true
    f_lo_hz = 15e3
    ...

    [channel.1]
    squeezing_db = -2.0
    agreement = 0.869

A channel with an ``agreement`` target gets its excess noise calibrated to
it; without one, ``antisqueezing_db`` sets the excess noise (pure state when
that is absent too).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from twinkey.dsp import FilterSpec, design_bandpass, samples_per, slice_count
from twinkey.gaussian import ChannelModel
from twinkey.keying import PipelineSettings
from twinkey.synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    squeezing_db: float
    agreement: float | None = None
    antisqueezing_db: float | None = None


DEFAULT_CHANNELS = (
    ChannelSpec(-2.0, 0.869),
    ChannelSpec(-2.3, 0.887),
    ChannelSpec(-2.1, 0.886),
)


@dataclass(frozen=True)
class RunConfig:
    channels: tuple[ChannelSpec, ...] = DEFAULT_CHANNELS
    seed: int = 20140101
    duration_s: float = 0.091
    sample_rate_hz: float = 16e6
    slice_ns: float = 500.0
    buffer_ns: float = 500.0
    n_bits: int | None = 90_000
    filter_enabled: bool = True
    filter: FilterSpec = field(default_factory=FilterSpec)
    squeeze_band_lo_hz: float = 15e3
    squeeze_band_hi_hz: float = 2e6
    technical_noise_db: float = 10.0
    technical_corner_hz: float = 15e3
    analysis_freq_hz: float = 1e6
    analysis_bandwidth_hz: float = 100e3
    output_dir: str = "runs"
    workers: int = 1

    def with_channel_count(self, n: int) -> "RunConfig":
        """Truncate, or extend by cycling the configured channels."""
        if n < 1:
            raise ConfigError("channel count must be at least 1")
        base = self.channels
        return replace(self, channels=tuple(base[i % len(base)] for i in range(n)))

    def channel_models(self) -> list[ChannelModel]:
        common = dict(
            squeeze_band_lo_hz=self.squeeze_band_lo_hz,
            squeeze_band_hi_hz=self.squeeze_band_hi_hz,
            technical_noise_db=self.technical_noise_db,
            technical_corner_hz=self.technical_corner_hz,
        )
        models = []
        for i, ch in enumerate(self.channels, 1):
            try:
                if ch.agreement is not None:
                    models.append(ChannelModel.calibrated(ch.squeezing_db, ch.agreement, **common))
                else:
                    models.append(ChannelModel.from_db(ch.squeezing_db, ch.antisqueezing_db, **common))
            except ValueError as exc:
                raise ConfigError(f"channel {i}: {exc}") from exc
        return models

    def synth_config(self) -> SynthConfig:
        try:
            return SynthConfig(self.duration_s, self.sample_rate_hz, self.channel_models(), self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def pipeline(self) -> PipelineSettings:
        return PipelineSettings(
            filter=self.filter if self.filter_enabled else None,
            slice_ns=self.slice_ns,
            buffer_ns=self.buffer_ns,
            n_bits=self.n_bits,
            analysis_freq_hz=self.analysis_freq_hz,
            analysis_bandwidth_hz=self.analysis_bandwidth_hz,
            workers=self.workers,
        )

    def validate(self) -> None:
        """Check every downstream invariant before any work starts."""
        if not self.channels:
            raise ConfigError("at least one channel is required")
        cfg = self.synth_config()
        try:
            k_slice = samples_per(self.slice_ns, self.sample_rate_hz)
            k_buf = samples_per(self.buffer_ns, self.sample_rate_hz)
            if k_slice < 1 or k_buf < 0:
                raise ValueError("slice must span at least one sample")
            n_valid = cfg.n_samples
            if self.filter_enabled:
                n_taps = len(design_bandpass(self.filter, self.sample_rate_hz))
                if cfg.n_samples < 3 * n_taps:
                    raise ValueError(f"duration too short for a {n_taps}-tap filter")
                n_valid -= 2 * n_taps
            if slice_count(n_valid, k_slice, k_buf) < 1000:
                raise ValueError("configuration yields fewer than 1000 bits")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.n_bits is not None and self.n_bits < 1000:
            raise ConfigError("n_bits must be at least 1000")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


_RUN_KEYS = {
    "seed": int,
    "duration_s": float,
    "sample_rate_hz": float,
    "slice_ns": float,
    "buffer_ns": float,
    "n_bits": int,
    "analysis_freq_hz": float,
    "analysis_bandwidth_hz": float,
    "output_dir": str,
    "workers": int,
}
_MODEL_KEYS = ("squeeze_band_lo_hz", "squeeze_band_hi_hz", "technical_noise_db", "technical_corner_hz")
_FILTER_KEYS = {
    "f_lo_hz": "f_lo_hz",
    "f_hi_hz": "f_hi_hz",
    "lo_transition_hz": "transition_width_hz",
    "hi_transition_hz": "hi_transition_width_hz",
    "stopband_db": "stopband_attenuation_db",
}


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "all") else int(float(text))


def _convert(section: str, key: str, text: str, kind):
    try:
        if key == "n_bits":
            return _optional_int(text)
        if kind is int:
            as_float = float(text)
            if as_float != int(as_float):
                raise ValueError(f"{text!r} is not an integer")
            return int(as_float)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    known = {"run", "filter", "model"}
    values: dict = {}
    try:
        if parser.has_section("run"):
            sec = parser["run"]
            for key in sec:
                if key not in _RUN_KEYS:
                    raise ConfigError(f"[run]: unknown key {key!r}")
                values[key] = _convert("run", key, sec[key], _RUN_KEYS[key])
        if parser.has_section("model"):
            sec = parser["model"]
            for key in sec:
                if key not in _MODEL_KEYS:
                    raise ConfigError(f"[model]: unknown key {key!r}")
                values[key] = _convert("model", key, sec[key], float)
        if parser.has_section("filter"):
            sec = parser["filter"]
            spec_kwargs = {}
            for key in sec:
                if key == "enabled":
                    values["filter_enabled"] = sec.getboolean(key)
                elif key in _FILTER_KEYS:
                    spec_kwargs[_FILTER_KEYS[key]] = _convert("filter", key, sec[key], float)
                else:
                    raise ConfigError(f"[filter]: unknown key {key!r}")
            values["filter"] = FilterSpec(**spec_kwargs)

        channel_sections = []
        for name in parser.sections():
            if name in known:
                continue
            if not name.startswith("channel."):
                raise ConfigError(f"unknown section [{name}]")
            try:
                index = int(name.split(".", 1)[1])
            except ValueError:
                raise ConfigError(f"bad channel section name [{name}]") from None
            if index < 1:
                raise ConfigError(f"channel sections are numbered from 1, got [{name}]")
            sec = parser[name]
            unknown = set(sec) - {"squeezing_db", "agreement", "antisqueezing_db"}
            if unknown:
                raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
            if "squeezing_db" not in sec:
                raise ConfigError(f"[{name}]: squeezing_db is required")
            channel_sections.append(
                (
                    index,
                    ChannelSpec(
                        _convert(name, "squeezing_db", sec["squeezing_db"], float),
                        _convert(name, "agreement", sec["agreement"], float) if "agreement" in sec else None,
                        _convert(name, "antisqueezing_db", sec["antisqueezing_db"], float)
                        if "antisqueezing_db" in sec
                        else None,
                    ),
                )
            )
        if channel_sections:
            values["channels"] = tuple(spec for _, spec in sorted(channel_sections))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from exc
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig, include_output_dir: bool = False) -> str:
    """INI text that :func:`parse_config` reads back to an equal config."""
    parser = configparser.ConfigParser()
    run = {k: getattr(cfg, k) for k in _RUN_KEYS if include_output_dir or k != "output_dir"}
    run["n_bits"] = "none" if cfg.n_bits is None else cfg.n_bits
    parser["run"] = {k: _fmt(v) for k, v in run.items()}
    parser["model"] = {k: _fmt(getattr(cfg, k)) for k in _MODEL_KEYS}
    filt = {"enabled": str(cfg.filter_enabled).lower()}
    filt.update({k: _fmt(getattr(cfg.filter, attr)) for k, attr in _FILTER_KEYS.items()})
    parser["filter"] = filt
    for i, ch in enumerate(cfg.channels, 1):
        sec = {"squeezing_db": _fmt(ch.squeezing_db)}
        if ch.agreement is not None:
            sec["agreement"] = _fmt(ch.agreement)
        if ch.antisqueezing_db is not None:
            sec["antisqueezing_db"] = _fmt(ch.antisqueezing_db)
        parser[f"channel.{i}"] = sec
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def field_names() -> list[str]:
    return [f.name for f in dataclasses.fields(RunConfig)]
