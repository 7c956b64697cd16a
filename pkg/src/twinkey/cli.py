"""Command-line entry point: ``twinkey {simulate,sweep,randtest,report}``."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from twinkey import reports
from twinkey.config import ChannelSpec, ConfigError, RunConfig, dump_config, load_config
from twinkey.formats import FormatError, read_bits_any
from twinkey.gaussian import ChannelModel, sign_agreement, squeezing_db, xor_agreement
from twinkey.keying import StageError, run_session
from twinkey.randtests import battery

log = logging.getLogger("twinkey")

ENV_OUTPUT_DIR = "TWINKEY_OUTPUT_DIR"
SWEEP_PARAMETERS = ("slice_ns", "f_lo", "f_hi", "squeezing_db", "channels")


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


# -- config assembly ----------------------------------------------------------


def resolve_config(args) -> RunConfig:
    """Config file (or built-in defaults), then the environment's output
    directory, then explicit flags."""
    cfg = load_config(args.config) if args.config else RunConfig()
    env_out = os.environ.get(ENV_OUTPUT_DIR)
    if env_out:
        cfg = replace(cfg, output_dir=env_out)
    overrides = {}
    for flag, key in (
        ("seed", "seed"),
        ("duration", "duration_s"),
        ("sample_rate", "sample_rate_hz"),
        ("slice_ns", "slice_ns"),
        ("buffer_ns", "buffer_ns"),
        ("n_bits", "n_bits"),
        ("output_dir", "output_dir"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_filter", False):
        overrides["filter_enabled"] = False
    filt = {}
    if getattr(args, "f_lo", None) is not None:
        filt["f_lo_hz"] = args.f_lo
    if getattr(args, "f_hi", None) is not None:
        filt["f_hi_hz"] = args.f_hi
    if filt:
        overrides["filter"] = replace(cfg.filter, **filt)
    cfg = replace(cfg, **overrides)
    if getattr(args, "channels", None) is not None:
        cfg = cfg.with_channel_count(args.channels)
    cfg.validate()
    return cfg


def new_run_dir(root, seed: int, prefix: str = "run") -> Path:
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(root) / f"{prefix}-{stamp}-seed{seed}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    return path


# -- simulate -----------------------------------------------------------------


def simulate(cfg: RunConfig, out_dir: Path, *, traces: bool = True, trace_csv: int | None = None) -> dict:
    t0 = time.perf_counter()
    session = run_session(cfg.synth_config(), cfg.pipeline(), keep_traces=traces)
    log.info("simulated %d channels in %.1f s", len(session.channels), time.perf_counter() - t0)
    try:
        manifest = reports.write_bundle(session, cfg, out_dir, traces=traces, trace_csv_samples=trace_csv)
    except OSError as exc:
        raise CliError("write", str(exc)) from exc
    return {"session": session, "manifest": manifest, "out_dir": out_dir}


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.run_dir) if args.run_dir else new_run_dir(cfg.output_dir, cfg.seed)
    result = simulate(cfg, out_dir, traces=not args.no_traces, trace_csv=args.trace_csv)
    print((out_dir / "tables.txt").read_text(), end="")
    s = json.loads((out_dir / "summary.json").read_text())
    print(
        f"\nbits per stream {s['n_bits']}  bit rate {s['bit_rate_bps'] / 1e6:.3f} Mbit/s  "
        f"battery {s['battery_passed']}/{s['battery_applicable']} passed"
    )
    print(f"wrote {out_dir}  bundle sha256 {result['manifest']['bundle_sha256']}")
    return 0


# -- sweep ----------------------------------------------------------------------


def parse_sweep_values(args) -> list[float]:
    if args.values is not None:
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise CliError("sweep", f"bad --values: {exc}") from None
    elif args.range is not None:
        start, stop, step = args.range
        if step == 0:
            raise CliError("sweep", "range step must be nonzero")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = [start + k * step for k in range(max(n, 0))]
    else:
        raise CliError("sweep", "give --values or --range")
    if not values:
        raise CliError("sweep", "empty sweep range")
    return values


def sweep_point(cfg: RunConfig, parameter: str, value: float) -> RunConfig:
    if parameter == "slice_ns":
        return replace(cfg, slice_ns=value)
    if parameter == "f_lo":
        return replace(cfg, filter=replace(cfg.filter, f_lo_hz=value))
    if parameter == "f_hi":
        return replace(cfg, filter=replace(cfg.filter, f_hi_hz=value))
    if parameter == "squeezing_db":
        # an agreement target only holds at its own squeezing level, so it is
        # turned into the anti-squeezing it implies and held fixed
        return replace(cfg, channels=tuple(_fixed_excess(ch, value) for ch in cfg.channels))
    if parameter == "channels":
        if value != int(value):
            raise CliError("sweep", f"channel count must be an integer, got {value}")
        return cfg.with_channel_count(int(value))
    raise CliError("sweep", f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")


def _fixed_excess(ch: ChannelSpec, squeezing: float) -> ChannelSpec:
    anti = ch.antisqueezing_db
    if ch.agreement is not None:
        try:
            anti = squeezing_db(ChannelModel.calibrated(ch.squeezing_db, ch.agreement).v_plus)
        except ValueError as exc:
            raise CliError("config", str(exc)) from exc
    return ChannelSpec(squeezing, None, anti)


SWEEP_COLUMNS = (
    "value",
    "n_channels",
    "n_bits",
    "mean_diagonal",
    "full_set",
    "full_set_sd",
    "predicted_full_set",
    "model_full_set",
    "key_rate_bps",
    "battery_passed",
    "battery_applicable",
)


def run_sweep(cfg: RunConfig, parameter: str, values) -> list[dict]:
    if parameter not in SWEEP_PARAMETERS:
        raise CliError("sweep", f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
    rows = []
    for value in values:
        point = sweep_point(cfg, parameter, value)
        try:
            point.validate()
        except ConfigError as exc:
            raise CliError("config", f"{parameter}={value:g}: {exc}") from exc
        session = run_session(point.synth_config(), point.pipeline())
        rand = session.randomness.values()
        rows.append(
            {
                "value": value,
                "n_channels": len(session.channels),
                "n_bits": session.n_bits,
                "mean_diagonal": float(np.mean(session.agreement.pairwise.diagonal)),
                "full_set": session.agreement.full_set.fraction,
                "full_set_sd": session.agreement.full_set.std_dev,
                "predicted_full_set": session.agreement.predicted_full_set,
                "model_full_set": xor_agreement([sign_agreement(m.rho) for m in point.channel_models()]),
                "key_rate_bps": session.bit_rate,
                "battery_passed": sum(r.n_passed for r in rand),
                "battery_applicable": sum(len(r.applicable) for r in rand),
            }
        )
        log.info("%s=%g: full set %.4f", parameter, value, rows[-1]["full_set"])
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: reports._num(v) for k, v in r.items()})


def cmd_sweep(args) -> int:
    if args.parameter not in SWEEP_PARAMETERS:
        raise CliError("sweep", f"unknown sweep parameter {args.parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
    values = parse_sweep_values(args)
    cfg = resolve_config(args)
    out_dir = Path(args.run_dir) if args.run_dir else new_run_dir(cfg.output_dir, cfg.seed, f"sweep-{args.parameter}")
    rows = run_sweep(cfg, args.parameter, values)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(dump_config(cfg))
    write_sweep_csv(rows, out_dir / f"sweep_{args.parameter}.csv")
    manifest = reports.write_manifest(out_dir)
    print(f"{args.parameter:>12} {'diag':>8} {'full':>8} {'pred':>8} {'model':>8} {'battery':>8}")
    for r in rows:
        print(
            f"{r['value']:>12g} {r['mean_diagonal']:8.4f} {r['full_set']:8.4f} {r['predicted_full_set']:8.4f} "
            f"{r['model_full_set']:8.4f} {r['battery_passed']:>4}/{r['battery_applicable']}"
        )
    print(f"wrote {out_dir}  bundle sha256 {manifest['bundle_sha256']}")
    return 0


# -- randtest / report ---------------------------------------------------------


def cmd_randtest(args) -> int:
    try:
        stream = read_bits_any(args.file)
    except (OSError, FormatError) as exc:
        raise CliError("read", str(exc)) from exc
    report = battery(stream.bits, stream=Path(args.file).name)
    print(f"{len(stream)} bits, {report.n_passed}/{len(report.applicable)} applicable tests passed")
    for r in report.results:
        if r.applicable:
            status = "pass" if r.passed else "FAIL"
            print(f"  {r.test_name:<26} p={r.p_value:.6f}  {status}")
        else:
            print(f"  {r.test_name:<26} not applicable ({r.note})")
    out = Path(args.out) if args.out else Path(args.file).with_suffix(".randomness.csv")
    try:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["test", "statistic", "p_value", "applicable", "passed", "note"])
            for r in report.rows():
                w.writerow(
                    [r["test"], reports._num(r["statistic"]), reports._num(r["p_value"]),
                     reports._num(r["applicable"]), reports._num(r["passed"]), r["note"]]
                )
    except OSError as exc:
        raise CliError("write", str(exc)) from exc
    print(f"wrote {out}")
    return 0


def cmd_report(args) -> int:
    try:
        text = reports.rerender(args.run_dir)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError("report", str(exc)) from exc
    print(text, end="")
    return 0


# -- parser ---------------------------------------------------------------------


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--channels", type=int, help="number of channels (cycles the configured ones)")
    p.add_argument("--duration", type=float, help="trace duration in seconds")
    p.add_argument("--sample-rate", type=float, help="sample rate in Hz")
    p.add_argument("--slice-ns", type=float)
    p.add_argument("--buffer-ns", type=float)
    p.add_argument("--n-bits", type=int, help="cap on bits per stream")
    p.add_argument("--f-lo", type=float, help="bandpass low edge (Hz)")
    p.add_argument("--f-hi", type=float, help="bandpass high edge (Hz)")
    p.add_argument("--no-filter", action="store_true", help="skip the bandpass")
    p.add_argument("--workers", type=int, help="threads for per-channel work")
    p.add_argument("--output-dir", help=f"root for run directories (overrides ${ENV_OUTPUT_DIR})")
    p.add_argument("--run-dir", help="exact output directory instead of a timestamped one")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinkey", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one seeded end-to-end run")
    _run_options(p)
    p.add_argument("--no-traces", action="store_true", help="do not store raw traces")
    p.add_argument("--trace-csv", type=int, metavar="N", help="also export the first N samples of each trace as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="one run per parameter value")
    p.add_argument("parameter", help=f"one of {', '.join(SWEEP_PARAMETERS)}")
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--values", help="comma-separated values")
    grp.add_argument("--range", nargs=3, type=float, metavar=("START", "STOP", "STEP"), help="inclusive range")
    _run_options(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("randtest", help="run the randomness battery on a bit file")
    p.add_argument("file", help="packed .twkb container or 0/1 text")
    p.add_argument("--out", help="CSV report path (default: next to the input)")
    p.set_defaults(func=cmd_randtest)

    p = sub.add_parser("report", help="re-render tables from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"twinkey: [config] {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"twinkey: [{exc.stage}] {exc}", file=sys.stderr)
        return 2 if exc.stage in ("config", "sweep") else 1
    except StageError as exc:
        print(f"twinkey: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
