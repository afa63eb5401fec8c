"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .detect import DetectError, DetectorConfig, detect
from .experiments import MATRIX_SFS, MATRIX_SIZES, frange, rssi_sweep, wormhole_matrix
from .phy import LatencyModel, PhyError, RadioParams, jamming_window, predict_jammable, time_on_air
from .scenario import ScenarioError, load_scenario
from .sim import run_scenario
from .trace import TraceError, TraceRecord, analyze, load_trace

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("expected a list such as 7-12 or 17,27,37")
    return out


def _ints_arg(text: str) -> list[int]:
    try:
        return _ints(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None


def _radio_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sf", type=_ints_arg, default=list(range(7, 13)), help="spreading factors, e.g. 7-12")
    p.add_argument("--bandwidth", type=int, default=125_000)
    p.add_argument("--cr", type=int, default=1, help="coding rate index, 1..4 for 4/5..4/8")
    p.add_argument("--preamble", type=int, default=8)
    p.add_argument("--implicit-header", action="store_true")
    p.add_argument("--no-crc", action="store_true")


def _params(a, sf: int) -> RadioParams:
    return RadioParams(sf, a.bandwidth, a.cr, a.preamble, not a.implicit_header, not a.no_crc)


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text(text, encoding="utf-8")


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------------ commands

def cmd_airtime(a) -> int:
    rows = [["sf", "size", "airtime_us", "airtime_ms"]]
    for sf in a.sf:
        p = _params(a, sf)
        for size in a.sizes:
            t = time_on_air(p, size)
            rows.append([sf, size, t, f"{t / 1000:.3f}"])
    _emit(_csv(rows), a.out, "airtime.csv")
    return EXIT_OK


def cmd_window(a) -> int:
    lat = LatencyModel(a.latency_mean_us, a.latency_std_us)
    rows = [["sf", "size", "read_bytes", "window_us", "latency_mean_us", "predicted"]]
    for sf in a.sf:
        p = _params(a, sf)
        for size in a.sizes:
            rows.append([sf, size, a.read, jamming_window(p, size, a.read), a.latency_mean_us,
                         predict_jammable(p, size, a.read, lat).value])
    _emit(_csv(rows), a.out, "window.csv")
    return EXIT_OK


def cmd_matrix(a) -> int:
    cells = wormhole_matrix(LatencyModel(a.latency_mean_us, a.latency_std_us), sizes=a.sizes, sfs=a.sf,
                            frames=a.frames, seed=a.seed, read_bytes=a.read, jobs=a.jobs)
    rows = [["sf", "size", "frames", "jammed", "jam_pct", "class", "predicted", "bench_observed", "note"]]
    for c in cells:
        note = ""
        if c.predicted == "S" and c.observed == "F":
            note = "model predicts jammable; bench hardware jammed none"
        rows.append([c.sf, c.size, c.frames, c.jammed, f"{c.jam_pct:.1f}", c.verdict, c.predicted,
                     c.observed or "", note])
    _emit(_csv(rows), a.out, "matrix.csv")
    if a.grid:
        lines = ["size " + " ".join(f"SF{sf:<2}" for sf in a.sf)]
        for size in a.sizes:
            marks = {c.sf: c.verdict for c in cells if c.size == size}
            lines.append(f"{size:>4} " + " ".join(f"{marks[sf]:<4}" for sf in a.sf))
        sys.stderr.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_run(a) -> int:
    s = load_scenario(a.scenario)
    if a.seed is not None:
        s = replace(s, seed=a.seed)
    result = run_scenario(s)
    outputs = set(s.outputs) | set(a.emit or [])
    _emit(result.metrics.to_csv(), a.out, "metrics.csv")
    if a.out is not None:
        d = Path(a.out)
        if "events" in outputs:
            result.log.write(d / "events.jsonl")
        if "server" in outputs:
            with open(d / "server.jsonl", "w", encoding="utf-8") as fh:
                for r in result.server_log:
                    rec = TraceRecord(r.t_us, r.channel_hz, r.sf, r.wire_len, r.dev_addr & 0xFFFFFFFF, r.status)
                    fh.write(json.dumps(rec.to_obj(), separators=(",", ":")) + "\n")
        (d / "digest.txt").write_text(
            f"events {result.log.digest()}\nmetrics {result.metrics.digest()}\n", encoding="utf-8")
    sys.stderr.write(f"event-log digest {result.log.digest()}\n")
    return EXIT_OK


def cmd_rssi_sweep(a) -> int:
    diffs = frange(a.start, a.stop, a.step)
    base = None
    if a.scenario:
        base = load_scenario(a.scenario)
        if not base.adversaries or not base.devices or not base.gateways:
            raise UsageError("the sweep scenario needs a device, a gateway and an adversary")
    if a.seed is not None and base is not None:
        base = replace(base, seed=a.seed)
    points = rssi_sweep(diffs, base=base, jammer=a.jammer, receiver=a.receiver, frames=a.frames,
                        seed=a.seed if a.seed is not None else 1, threshold_db=a.threshold)
    rows = [["differential_db", "jammer_rssi_dbm", "sent", "jammed", "jam_pct"]]
    rows += [[p.differential_db, p.jammer_rssi_dbm, p.sent, p.jammed, f"{p.jam_pct:.1f}"] for p in points]
    _emit(_csv(rows), a.out, "rssi_sweep.csv")
    return EXIT_OK


def cmd_analyze_trace(a) -> int:
    stats = analyze(load_trace(a.trace))
    if a.format == "json":
        _emit(json.dumps(stats.to_obj(), indent=2) + "\n", a.out, "trace_stats.json")
    else:
        rows = [["channel_hz", "fraction"]] + [[c, f"{f:.6f}"] for c, f in sorted(stats.channel_histogram.items())]
        rows += [[], ["message_count", stats.message_count], ["distinct_devices", stats.distinct_devices],
                 ["mean_wire_length", f"{stats.mean_wire_length:.3f}"],
                 ["mean_payload_length", f"{stats.mean_payload_length:.3f}"]]
        _emit(_csv(rows), a.out, "trace_stats.csv")
    return EXIT_OK


def cmd_detect(a) -> int:
    cfg = DetectorConfig(mode=a.mode, expected_period_us=a.period_us, warmup_us=a.warmup_us, k=a.k, z=a.z,
                         use_rejects=not a.hide_rejects)
    records = [r.delivery() for r in load_trace(a.log)]
    alarms = detect(records, cfg, t_end=a.t_end_us)
    _emit("".join(json.dumps(al.to_obj(), separators=(",", ":")) + "\n" for al in alarms), a.out, "alarms.jsonl")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lorajam", description="LoRaWAN jamming and replay simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("airtime", help="time-on-air per SF and frame size")
    _radio_flags(s)
    s.add_argument("--sizes", type=_ints_arg, default=[5, 17, 27, 37, 47, 57])
    s.add_argument("--out")
    s.set_defaults(func=cmd_airtime)

    s = sub.add_parser("window", help="jamming window and model prediction per cell")
    _radio_flags(s)
    s.add_argument("--sizes", type=_ints_arg, default=list(MATRIX_SIZES))
    s.add_argument("--read", type=int, default=5, help="prefix bytes read before deciding")
    s.add_argument("--latency-mean-us", type=int, default=100_830)
    s.add_argument("--latency-std-us", type=int, default=1_700)
    s.add_argument("--out")
    s.set_defaults(func=cmd_window)

    s = sub.add_parser("matrix", help="simulated wormhole S/M/F grid")
    s.add_argument("--sf", type=_ints_arg, default=list(MATRIX_SFS))
    s.add_argument("--sizes", type=_ints_arg, default=list(MATRIX_SIZES))
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--read", type=int, default=5)
    s.add_argument("--latency-mean-us", type=int, default=100_830)
    s.add_argument("--latency-std-us", type=int, default=1_700)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.add_argument("--grid", action="store_true", help="also print the grid to stderr")
    s.add_argument("--out")
    s.set_defaults(func=cmd_matrix)

    s = sub.add_parser("run", help="run a scenario file")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--emit", action="append", choices=["events", "server"], help="extra outputs to write")
    s.add_argument("--out", help="output directory (metrics to stdout when omitted)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("rssi-sweep", help="jam rate against jammer/victim RSSI differential")
    s.add_argument("--scenario", help="base scenario (default: SF12 single-victim preset)")
    s.add_argument("--jammer", help="adversary id whose RSSI is swept")
    s.add_argument("--receiver", help="gateway id (default: first gateway)")
    s.add_argument("--from", dest="start", type=float, default=0.0)
    s.add_argument("--to", dest="stop", type=float, default=50.0)
    s.add_argument("--step", type=float, default=2.0)
    s.add_argument("--frames", type=int, default=50)
    s.add_argument("--threshold", type=float, default=36.0, help="SF12/SF12 capture threshold for the preset")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rssi_sweep)

    s = sub.add_parser("analyze-trace", help="summary statistics of a gateway log")
    s.add_argument("trace")
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_trace)

    s = sub.add_parser("detect", help="run a traffic-profiling detector over a delivery log")
    s.add_argument("log")
    s.add_argument("--mode", choices=["known", "learned"], default="known")
    s.add_argument("--period-us", type=int)
    s.add_argument("--warmup-us", type=int)
    s.add_argument("-k", type=int, default=3)
    s.add_argument("-z", type=float, default=2.0)
    s.add_argument("--hide-rejects", action="store_true")
    s.add_argument("--t-end-us", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_detect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return a.func(a)
    except (ScenarioError, PhyError, TraceError, DetectError, UsageError, ValueError, FileNotFoundError) as e:
        sys.stderr.write(f"lorajam {a.command}: {e}\n")
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - surfaced as a runtime failure
        sys.stderr.write(f"lorajam {a.command}: runtime error: {e!r}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
