"""Report bundle: tables, plot-ready CSVs, bit files and a digest manifest.

Everything written here is a pure function of the session and its config, so
two runs with the same inputs produce byte-identical bundles.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
from scipy import optimize

from twinkey.config import RunConfig, dump_config
from twinkey.dsp import adjacent_bit_correlation
from twinkey.formats import write_bits, write_bits_text, write_trace, write_trace_csv
from twinkey.keying import SessionTranscript

MANIFEST = "manifest.json"
TIMESERIES_POINTS = 400
SCATTER_POINTS = 5000
HIST_BINS = 60


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x, digits=10):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.{digits}g}"


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- tables -----------------------------------------------------------------


def matrix_rows(session: SessionTranscript) -> tuple[list[str], list[list[str]]]:
    pw = session.agreement.pairwise
    n = len(pw.fraction)
    header = ["probe"]
    for j in range(n):
        header += [f"C{j + 1}", f"C{j + 1}_sd"]
    rows = []
    for i in range(n):
        row = [f"P{i + 1}"]
        for j in range(n):
            row += [_num(100 * pw.fraction[i, j], 8), _num(100 * pw.std_dev[i, j], 8)]
        rows.append(row)
    return header, rows


def subset_rows(session: SessionTranscript) -> tuple[list[str], list[list[str]]]:
    header = ["subset", "agreement_pct", "sd_pct"]
    rows = [[r.label, _num(100 * r.fraction, 8), _num(100 * r.std_dev, 8)] for r in session.agreement.subsets]
    return header, rows


def render_tables(matrix: list[dict], subsets: list[dict]) -> str:
    """Fixed-width text rendering of the two agreement tables (percent)."""
    cols = [k for k in matrix[0] if k != "probe" and not k.endswith("_sd")] if matrix else []
    lines = ["Probe/conjugate bit agreement (%)", ""]
    lines.append(f"{'':<6}" + "".join(f"{c:>16}" for c in cols))
    for row in matrix:
        cells = "".join(f"{float(row[c]):>9.1f} ± {float(row[c + '_sd']):<4.1f}" for c in cols)
        lines.append((f"{row['probe']:<6}" + cells).rstrip())
    lines += ["", "Key agreement with XOR of receiver subsets (%)", ""]
    width = max([len(r["subset"]) for r in subsets] + [6])
    for row in subsets:
        lines.append(f"{row['subset']:<{width}}  {float(row['agreement_pct']):6.1f} ± {float(row['sd_pct']):.1f}")
    return "\n".join(lines) + "\n"


# -- plot data ------------------------------------------------------------


def _gauss(x, amp, mu, sigma):
    return amp * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def gaussian_fit(values: np.ndarray, bins: int = HIST_BINS):
    """Density histogram and least-squares Gaussian fit of ``values``.

    Returns (edges, density, (amp, mu, sigma))."""
    values = np.asarray(values, dtype=float)
    density, edges = np.histogram(values, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    sd = float(values.std()) or 1.0
    p0 = (1 / (sd * math.sqrt(2 * math.pi)), float(values.mean()), sd)
    params, _ = optimize.curve_fit(_gauss, centers, density, p0=p0)
    amp, mu, sigma = params
    return edges, density, (float(amp), float(mu), abs(float(sigma)))


def _quadrant(p: float, c: float) -> str:
    return ("+" if p > 0 else "-") + ("+" if c > 0 else "-")


# -- bundle -----------------------------------------------------------------


def _summary(session: SessionTranscript, cfg: RunConfig) -> dict:
    pw = session.agreement.pairwise
    rand = session.randomness
    streams = session.probes + session.conjugates
    return {
        "seed": cfg.seed,
        "n_channels": len(session.channels),
        "n_bits": session.n_bits,
        "duration_s": session.duration_s,
        "bit_rate_bps": session.bit_rate,
        "filter_enabled": cfg.filter_enabled,
        "diagonal": [float(x) for x in pw.diagonal],
        "off_diagonal_min": float(pw.off_diagonal.min()) if len(pw.off_diagonal) else None,
        "off_diagonal_max": float(pw.off_diagonal.max()) if len(pw.off_diagonal) else None,
        "full_set": session.agreement.full_set.fraction,
        "full_set_sd": session.agreement.full_set.std_dev,
        "predicted_full_set": session.agreement.predicted_full_set,
        "key_recovered_exactly": bool(np.array_equal(session.key.bits, session.recovered_key.bits)),
        "battery_passed": sum(r.n_passed for r in rand.values()),
        "battery_applicable": sum(len(r.applicable) for r in rand.values()),
        "ones_fraction": {f"{s.role[0].upper()}{s.source_channel}": float(s.bits.mean()) for s in streams},
        "lag1_correlation": {
            f"{s.role[0].upper()}{s.source_channel}": adjacent_bit_correlation(s) for s in streams if len(s) >= 1000
        },
        "transcript_sha256": session.digest(),
    }


def write_bundle(
    session: SessionTranscript,
    cfg: RunConfig,
    out_dir,
    *,
    traces: bool = True,
    trace_csv_samples: int | None = None,
) -> dict:
    """Write every artifact of ``session`` into ``out_dir`` and return the
    manifest.  Files are written sequentially after all computation is done."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "config.ini").write_text(dump_config(cfg))

    h, rows = matrix_rows(session)
    _write_csv(out / "agreement_matrix.csv", h, rows)
    h2, rows2 = subset_rows(session)
    _write_csv(out / "subset_agreement.csv", h2, rows2)
    (out / "tables.txt").write_text(
        render_tables(_read_csv(out / "agreement_matrix.csv"), _read_csv(out / "subset_agreement.csv"))
    )

    rand_rows = []
    for name, rep in session.randomness.items():
        for r in rep.rows():
            rand_rows.append([name, r["test"], _num(r["statistic"]), _num(r["p_value"]), _num(r["applicable"]),
                              _num(r["passed"]), r["note"]])
    _write_csv(out / "randomness.csv", ["stream", "test", "statistic", "p_value", "applicable", "passed", "note"],
               rand_rows)

    _write_csv(
        out / "squeezing.csv",
        ["channel", "estimated_db", "at_floor", "model_db", "witness_margin", "entangled", "predicted_agreement"],
        [
            [ch.channel_id, _num(ch.squeezing.db), _num(ch.squeezing.at_floor), _num(ch.model_squeezing_db),
             _num(ch.witness_margin), _num(ch.entangled), _num(ch.predicted_agreement)]
            for ch in session.channels
        ],
    )

    scatter = []
    for ch in session.channels:
        n = min(SCATTER_POINTS, len(ch.probe_values))
        for k in range(n):
            p, c = ch.probe_values[k], ch.conjugate_values[k]
            scatter.append([ch.channel_id, k, _num(p), _num(c), _quadrant(p, c), _num((p > 0) == (c > 0))])
    _write_csv(out / "quadrant_scatter.csv", ["channel", "index", "probe", "conjugate", "quadrant", "agree"], scatter)

    first = session.channels[0]
    _write_csv(
        out / "trace_excerpt.csv",
        ["slice_index", "time_us", "value"],
        [
            [k, _num(k * (cfg.slice_ns + cfg.buffer_ns) / 1000), _num(v)]
            for k, v in enumerate(first.probe_values[:TIMESERIES_POINTS])
        ],
    )
    edges, density, (amp, mu, sigma) = gaussian_fit(first.probe_values)
    _write_csv(
        out / "trace_histogram.csv",
        ["bin_lo", "bin_hi", "density", "fit_density"],
        [
            [_num(lo), _num(hi), _num(d), _num(_gauss(0.5 * (lo + hi), amp, mu, sigma))]
            for lo, hi, d in zip(edges[:-1], edges[1:], density)
        ],
    )
    _write_csv(out / "trace_histogram_fit.csv", ["stream", "amplitude", "mean", "sigma"],
               [[f"P{first.channel_id}", _num(amp), _num(mu), _num(sigma)]])

    bits_dir = out / "bits"
    bits_dir.mkdir(exist_ok=True)
    named = [(f"P{s.source_channel}", s) for s in session.probes]
    named += [(f"C{s.source_channel}", s) for s in session.conjugates]
    named += [("key", session.key), ("recovered_key", session.recovered_key)]
    for name, stream in named:
        write_bits(stream, bits_dir / f"{name}.twkb")
        write_bits_text(stream, bits_dir / f"{name}.txt")

    if traces:
        tr_dir = out / "traces"
        tr_dir.mkdir(exist_ok=True)
        all_traces = []
        for ch in session.channels:
            if ch.traces is not None:
                all_traces += list(ch.traces)
        if session.shot_trace is not None:
            all_traces.append(session.shot_trace)
        for t in all_traces:
            stem = "shot_noise" if t.role == "shot-noise" else f"{t.role}_{t.channel_id}"
            write_trace(t, tr_dir / f"{stem}.twky")
            if trace_csv_samples:
                write_trace_csv(t, tr_dir / f"{stem}.csv", trace_csv_samples)

    (out / "transcript.txt").write_text(session.to_text())
    (out / "transcript.json").write_text(session.to_json() + "\n")
    (out / "summary.json").write_text(json.dumps(_summary(session, cfg), indent=1, sort_keys=True) + "\n")

    return write_manifest(out)


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(out_dir) -> dict:
    out = Path(out_dir)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    entries = [
        {"path": p.relative_to(out).as_posix(), "sha256": file_digest(p), "bytes": p.stat().st_size} for p in files
    ]
    bundle = hashlib.sha256("".join(f"{e['path']}\0{e['sha256']}\n" for e in entries).encode()).hexdigest()
    return {"files": entries, "bundle_sha256": bundle}


def write_manifest(out_dir) -> dict:
    manifest = build_manifest(out_dir)
    (Path(out_dir) / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def rerender(run_dir) -> str:
    """Regenerate tables.txt from a run's stored table CSVs; refreshes the
    manifest and returns the rendered text."""
    run = Path(run_dir)
    t1, t2 = run / "agreement_matrix.csv", run / "subset_agreement.csv"
    for p in (t1, t2):
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found; is {run} a run directory?")
    text = render_tables(_read_csv(t1), _read_csv(t2))
    (run / "tables.txt").write_text(text)
    write_manifest(run)
    return text
