"""XOR secret sharing over probe/conjugate bit streams.

Alice measures every probe mode and keeps the XOR of her streams as the key.
Each receiver measures one conjugate mode; only the XOR of all receiver
streams is correlated with the key.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from twinkey.dsp import BitStream, FilterSpec, SqueezingEstimate, estimate_squeezing, process_trace
from twinkey.gaussian import entanglement_witness, sign_agreement, squeezing_db, xor_agreement
from twinkey.randtests import RandomnessReport, battery
from twinkey.synth import QuadratureTrace, SynthConfig, synth_pair, synth_shot_noise

log = logging.getLogger(__name__)

N_BLOCKS = 10
EXHAUSTIVE_SUBSET_LIMIT = 20
RECEIVER_NAMES = ("Bob", "Charlie", "Diana")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def form_key(streams: Sequence[BitStream]) -> BitStream:
    """Elementwise XOR of all streams."""
    if len(streams) == 0:
        raise ValueError("need at least one stream")
    n = len(streams[0])
    if any(len(s) != n for s in streams):
        raise ValueError("streams differ in length")
    bits = np.bitwise_xor.reduce(np.vstack([s.bits for s in streams]), axis=0)
    return streams[0].with_bits(bits, role="key", source_channel=0)


class Agreement(NamedTuple):
    fraction: float
    std_dev: float


def _block_agreement(equal: np.ndarray) -> Agreement:
    block = len(equal) // N_BLOCKS
    per_block = equal[: block * N_BLOCKS].reshape(N_BLOCKS, block).mean(axis=1)
    return Agreement(float(equal.mean()), float(per_block.std(ddof=1)))


def agreement(a: BitStream, b: BitStream) -> Agreement:
    """Fraction of equal positions, with the standard deviation of that
    fraction across ten contiguous equal-length blocks."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < N_BLOCKS:
        raise ValueError(f"need at least {N_BLOCKS} bits")
    return _block_agreement(a.bits == b.bits)


@dataclass
class PairwiseAgreement:
    fraction: np.ndarray
    std_dev: np.ndarray

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.fraction)

    @property
    def off_diagonal(self) -> np.ndarray:
        mask = ~np.eye(len(self.fraction), dtype=bool)
        return self.fraction[mask]


def agreement_matrix(probes: Sequence[BitStream], conjugates: Sequence[BitStream]) -> PairwiseAgreement:
    if len(probes) != len(conjugates):
        raise ValueError("probe and conjugate counts differ")
    n = len(probes)
    frac = np.zeros((n, n))
    std = np.zeros((n, n))
    for i, j in itertools.product(range(n), repeat=2):
        frac[i, j], std[i, j] = agreement(probes[i], conjugates[j])
    return PairwiseAgreement(frac, std)


@dataclass(frozen=True)
class SubsetRow:
    members: tuple[int, ...]
    fraction: float
    std_dev: float

    @property
    def label(self) -> str:
        return "+".join(f"C{m + 1}" for m in self.members)


def _subsets(n: int):
    if n <= EXHAUSTIVE_SUBSET_LIMIT:
        return None
    idx = range(n)
    chosen = [(i,) for i in idx] + list(itertools.combinations(idx, 2)) + [tuple(idx)]
    return chosen


def subset_report(conjugates: Sequence[BitStream], key: BitStream) -> list[SubsetRow]:
    """Agreement of XOR(S) with the key for receiver subsets S.

    Exhaustive up to 20 receivers (walked in Gray-code order so each subset
    costs one XOR); beyond that only singletons, pairs and the full set.
    Rows are ordered by subset size, then lexicographically.
    """
    n = len(conjugates)
    if n == 0:
        raise ValueError("need at least one receiver stream")
    if any(len(c) != len(key) for c in conjugates):
        raise ValueError("receiver streams and key differ in length")
    if len(key) < N_BLOCKS:
        raise ValueError(f"need at least {N_BLOCKS} bits")
    rows = []
    explicit = _subsets(n)
    if explicit is None:
        current = np.zeros(len(key), dtype=np.uint8)
        members: set[int] = set()
        for step in range(1, 2**n):
            flip = (step & -step).bit_length() - 1
            current ^= conjugates[flip].bits
            members ^= {flip}
            frac, std = _block_agreement(current == key.bits)
            rows.append(SubsetRow(tuple(sorted(members)), frac, std))
    else:
        for subset in explicit:
            combined = np.bitwise_xor.reduce(np.vstack([conjugates[i].bits for i in subset]), axis=0)
            frac, std = _block_agreement(combined == key.bits)
            rows.append(SubsetRow(subset, frac, std))
    rows.sort(key=lambda r: (len(r.members), r.members))
    return rows


@dataclass
class AgreementReport:
    pairwise: PairwiseAgreement
    subsets: list[SubsetRow]

    @property
    def full_set(self) -> SubsetRow:
        return self.subsets[-1]

    @property
    def predicted_full_set(self) -> float:
        return xor_agreement(list(self.pairwise.diagonal))


@dataclass(frozen=True)
class Party:
    name: str
    role: str
    held_streams: tuple[BitStream, ...] = ()

    def __post_init__(self):
        if self.role not in ("sender", "receiver"):
            raise ValueError(f"unknown party role {self.role!r}")
        if self.role == "receiver" and len(self.held_streams) > 1:
            raise ValueError("a receiver holds exactly one stream")


def receiver_names(n: int) -> list[str]:
    return [RECEIVER_NAMES[i] if i < len(RECEIVER_NAMES) else f"Receiver{i + 1}" for i in range(n)]


def payload_digest(payload) -> str:
    if isinstance(payload, BitStream):
        data = np.packbits(payload.bits).tobytes() + len(payload).to_bytes(8, "little")
    elif isinstance(payload, QuadratureTrace):
        data = payload.samples.astype("<f8").tobytes()
    else:
        data = bytes(payload)
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class Record:
    seq: int
    stage: str
    party: str
    direction: str
    peer: str
    kind: str
    payload_digest: str
    size: int

    def to_text(self) -> str:
        arrow = {"send": "->", "recv": "<-", "local": "::"}[self.direction]
        return (
            f"{self.seq:04d} {self.stage:<10} {self.party:<10} {arrow} {self.peer:<10} "
            f"{self.kind:<16} size={self.size} sha256={self.payload_digest[:16]}"
        )


class ClassicalChannel:
    """In-process message queue between named parties; every send and
    delivery lands in the shared transcript log."""

    def __init__(self, log_record):
        self._queues: dict[str, deque] = {}
        self._log = log_record

    def send(self, stage: str, sender: str, receiver: str, kind: str, payload: BitStream) -> None:
        self._queues.setdefault(receiver, deque()).append((sender, kind, payload))
        self._log(stage, sender, "send", receiver, kind, payload)

    def receive(self, stage: str, receiver: str) -> tuple[str, str, BitStream]:
        queue = self._queues.get(receiver)
        if not queue:
            raise StageError(stage, f"{receiver} has no pending messages")
        sender, kind, payload = queue.popleft()
        self._log(stage, receiver, "recv", sender, kind, payload)
        return sender, kind, payload


@dataclass(frozen=True)
class PipelineSettings:
    filter: FilterSpec | None = field(default_factory=FilterSpec)
    slice_ns: float = 500.0
    buffer_ns: float = 500.0
    n_bits: int | None = 90_000
    analysis_freq_hz: float = 1e6
    analysis_bandwidth_hz: float = 100e3
    run_battery: bool = True
    workers: int = 1


@dataclass
class ChannelResult:
    channel_id: int
    probe: BitStream
    conjugate: BitStream
    probe_values: np.ndarray
    conjugate_values: np.ndarray
    squeezing: SqueezingEstimate
    model_squeezing_db: float
    witness_margin: float
    entangled: bool
    predicted_agreement: float
    traces: tuple[QuadratureTrace, QuadratureTrace] | None = None


@dataclass
class SessionTranscript:
    records: list[Record]
    channels: list[ChannelResult]
    key: BitStream
    recovered_key: BitStream
    agreement: AgreementReport
    randomness: dict[str, RandomnessReport]
    duration_s: float
    shot_trace: QuadratureTrace | None = None

    @property
    def probes(self) -> list[BitStream]:
        return [c.probe for c in self.channels]

    @property
    def conjugates(self) -> list[BitStream]:
        return [c.conjugate for c in self.channels]

    @property
    def n_bits(self) -> int:
        return len(self.key)

    @property
    def bit_rate(self) -> float:
        """Realized bits per second per stream."""
        return self.n_bits / self.duration_s

    def to_records(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    def to_json(self) -> str:
        return json.dumps(self.to_records(), indent=1, sort_keys=True)

    def to_text(self) -> str:
        return "\n".join(r.to_text() for r in self.records) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_records(), sort_keys=True).encode()).hexdigest()


def _run_channel(model, cfg, channel_id, shot, settings, keep_traces) -> ChannelResult:
    probe_trace, conj_trace = synth_pair(model, cfg, channel_id)
    probe, probe_values = process_trace(
        probe_trace, settings.filter, settings.slice_ns, settings.buffer_ns, settings.n_bits
    )
    conj, conj_values = process_trace(
        conj_trace, settings.filter, settings.slice_ns, settings.buffer_ns, settings.n_bits
    )
    squeezing = estimate_squeezing(
        probe_trace, conj_trace, shot, settings.analysis_freq_hz, settings.analysis_bandwidth_hz
    )
    witness = entanglement_witness(model.covariance())
    return ChannelResult(
        channel_id=channel_id,
        probe=probe,
        conjugate=conj,
        probe_values=probe_values,
        conjugate_values=conj_values,
        squeezing=squeezing,
        model_squeezing_db=squeezing_db(model.v_minus),
        witness_margin=witness.margin,
        entangled=witness.entangled,
        predicted_agreement=sign_agreement(model.rho),
        traces=(probe_trace, conj_trace) if keep_traces else None,
    )


def run_session(
    cfg: SynthConfig,
    settings: PipelineSettings | None = None,
    keep_traces: bool = False,
) -> SessionTranscript:
    """Synthesize every channel, measure, form and distribute the key, and
    evaluate agreement, randomness and squeezing.  Channel work may fan out
    over ``settings.workers`` threads; all transcript records are appended in
    channel order afterwards so the transcript does not depend on scheduling.
    """
    settings = settings or PipelineSettings()
    if not cfg.channels:
        raise StageError("config", "at least one channel is required")
    records: list[Record] = []

    def record(stage, party, direction, peer, kind, payload):
        size = len(payload) if hasattr(payload, "__len__") else 0
        records.append(Record(len(records), stage, party, direction, peer, kind, payload_digest(payload), size))

    names = receiver_names(len(cfg.channels))

    stage = "synthesize"
    try:
        shot = synth_shot_noise(cfg)
        ids = range(1, len(cfg.channels) + 1)
        args = [(m, cfg, i, shot, settings, keep_traces) for m, i in zip(cfg.channels, ids)]
        if settings.workers > 1:
            with ThreadPoolExecutor(settings.workers) as pool:
                channels = list(pool.map(lambda a: _run_channel(*a), args))
        else:
            channels = [_run_channel(*a) for a in args]
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    # quantum distribution and local measurement, logged in channel order
    for ch, name in zip(channels, names):
        record("quantum", "Source", "send", "Alice", f"probe_mode_{ch.channel_id}", ch.probe)
        record("quantum", "Source", "send", name, f"conjugate_mode_{ch.channel_id}", ch.conjugate)
    for ch, name in zip(channels, names):
        record("measure", "Alice", "local", "Alice", f"P{ch.channel_id}", ch.probe)
        record("measure", name, "local", name, f"C{ch.channel_id}", ch.conjugate)

    stage = "key"
    try:
        alice = Party("Alice", "sender", tuple(ch.probe for ch in channels))
        receivers = [Party(name, "receiver", (ch.conjugate,)) for ch, name in zip(channels, names)]
        key = form_key(alice.held_streams)
        record(stage, "Alice", "local", "Alice", "key", key)

        channel = ClassicalChannel(record)
        combiner = receivers[0]
        for r in receivers[1:]:
            channel.send("share", r.name, combiner.name, "share", r.held_streams[0])
        shares = list(combiner.held_streams)
        for _ in receivers[1:]:
            _, _, payload = channel.receive("share", combiner.name)
            shares.append(payload)
        recovered = form_key(shares)
        record("combine", combiner.name, "local", combiner.name, "recovered_key", recovered)

        # verification only: every stream is disclosed to an auditor
        for s in alice.held_streams:
            channel.send("audit", "Alice", "Auditor", f"P{s.source_channel}", s)
        for r in receivers:
            channel.send("audit", r.name, "Auditor", f"C{r.held_streams[0].source_channel}", r.held_streams[0])
        for _ in range(2 * len(receivers)):
            channel.receive("audit", "Auditor")
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    stage = "analyze"
    try:
        probes = [ch.probe for ch in channels]
        conjugates = [ch.conjugate for ch in channels]
        report = AgreementReport(agreement_matrix(probes, conjugates), subset_report(conjugates, key))
        randomness: dict[str, RandomnessReport] = {}
        if settings.run_battery:
            for ch in channels:
                for s, tag in ((ch.probe, "P"), (ch.conjugate, "C")):
                    name = f"{tag}{ch.channel_id}"
                    randomness[name] = battery(s.bits, stream=name)
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    log.info(
        "session: %d channels, %d bits, full-set agreement %.4f",
        len(channels),
        len(key),
        report.full_set.fraction,
    )
    return SessionTranscript(
        records=records,
        channels=channels,
        key=key,
        recovered_key=recovered,
        agreement=report,
        randomness=randomness,
        duration_s=cfg.n_samples / cfg.sample_rate_hz,
        shot_trace=shot if keep_traces else None,
    )
