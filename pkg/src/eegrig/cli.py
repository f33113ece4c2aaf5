"""Headless entry points: simulate, replay, analyze, record, serve, ingest.

Every subcommand is a thin composition of the library modules; outputs are
the session record formats, so anything produced here feeds back into
replay/analyze. Exit codes: 0 ok, 2 usage, 3 data/format, 4 runtime/stream.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, acquisition as acq
from .dsp import FilterDesignError, MissingMarkersError
from .protocol import ConversionParams, DATA_RATES
from .session import (
    IngestError,
    IngestSpec,
    RecordFormatError,
    SessionProtocol,
    alpha_protocol,
    analyze_record,
    ingest_external,
    read_record,
    record_from_frames,
    run_session,
    write_record,
)
from .simdevice import (
    Marker,
    PRESET_NAMES,
    ScenarioError,
    SignalScenario,
    build_preset,
    load_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_DATA_ERRORS = (RecordFormatError, IngestError, ScenarioError, FilterDesignError,
                MissingMarkersError)
_RUNTIME_ERRORS = (acq.BackendError, acq.StreamStateError, acq.ConfigurationError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegrig",
        description="16-channel EEG acquisition stack: simulate, record, replay, analyze, serve.",
    )
    parser.add_argument("--version", action="version", version=f"eegrig {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="seed for synthetic scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the simulated pair into a record file")
    p.add_argument("--scenario", required=True, help=f"preset ({', '.join(PRESET_NAMES)}) or scenario file")
    p.add_argument("--duration", type=float, default=None, help="seconds to record (default: scenario length)")
    p.add_argument("--sps", type=int, default=250, choices=sorted(DATA_RATES))
    p.add_argument("--gain", type=int, default=24)
    p.add_argument("--out", required=True, help="record CSV to write")

    p = sub.add_parser("replay", help="stream a record through the replay backend")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--speed", type=float, default=1.0, help="pacing multiplier; 0 = as fast as possible")
    p.add_argument("--out", default=None, help="optionally re-record the replayed stream")

    p = sub.add_parser("analyze", help="run the alpha or artifact report over a record")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--report", required=True, choices=("alpha", "artifact"))
    p.add_argument("--channel", type=int, default=None, help="artifact analysis channel (default: Fz)")
    p.add_argument("--out", default=None, help="write the report table as CSV")

    p = sub.add_parser("record", help="run a cued session over a simulated stream")
    p.add_argument("--protocol", default="alpha", choices=("alpha",))
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--scenario", required=True)
    p.add_argument("--sps", type=int, default=250, choices=sorted(DATA_RATES))
    p.add_argument("--gain", type=int, default=24)
    p.add_argument("--realtime", action="store_true", help="pace the simulated device to the wall clock")
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="start the local control/streaming service")
    p.add_argument("--port", type=int, default=8240)
    p.add_argument("--bind", default="127.0.0.1",
                   help="bind address (loopback unless you opt into exposure)")
    p.add_argument("--data-dir", default="./eegrig-data")
    p.add_argument("--ui-dir", default=None, help="built operator console to serve at / (optional)")

    p = sub.add_parser("ingest", help="normalize an external CSV into a record")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--sps", type=int, required=True)
    p.add_argument("--unit", default="uV", choices=("uV", "V"))
    p.add_argument("--columns", default=None,
                   help="16 channel columns: names (a,b,...) or index range like 0-15")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--out", required=True)

    return parser


def _resolve_scenario(name: str, duration: float | None, sps: int, seed: int) -> SignalScenario:
    if name in PRESET_NAMES:
        return build_preset(name, duration_s=duration, sps=sps, seed=seed)
    path = Path(name)
    if not path.is_file():
        raise ScenarioError(f"{name!r} is neither a preset nor a scenario file")
    scenario = load_scenario(path)
    updates = {"seed": seed}
    if duration is not None:
        updates["duration_s"] = duration
    if sps != scenario.sps:
        updates["sps"] = sps
    return replace(scenario, **updates)


def _truncated_markers(scenario: SignalScenario, duration: float) -> tuple[Marker, ...]:
    markers = []
    for marker in scenario.markers:
        if marker.t_start_s >= duration:
            continue
        markers.append(Marker(marker.label, marker.t_start_s, min(marker.t_end_s, duration)))
    return tuple(markers)


def _collect_stream(backend, gain: int, n_frames: int):
    """Run a finite stream to completion and hand back its frames."""
    buffer = acq.RingBuffer(capacity=n_frames + 8)
    reader = buffer.register_reader()
    handle = acq.run_stream(backend, ConversionParams(gain=gain), buffer)
    handle.join()
    status = handle.status
    if status is not None and not status.clean:
        raise acq.BackendError(f"stream failed: {status.reason}: {status.error}")
    return reader.drain().frames, handle


def cmd_simulate(args) -> int:
    scenario = _resolve_scenario(args.scenario, args.duration, args.sps, args.seed)
    duration = args.duration if args.duration is not None else scenario.duration_s
    n_frames = int(round(duration * args.sps))
    backend = acq.SimulatedBackend(scenario, pace="unpaced", stop_after_s=duration)
    backend.initialize()
    acq.configure(backend, acq.StreamSettings(sps=args.sps, gain=args.gain))
    backend.start_stream()
    frames, _ = _collect_stream(backend, args.gain, n_frames)
    record = record_from_frames(
        frames, sps=args.sps, gain=float(args.gain),
        markers=_truncated_markers(scenario, duration),
        source=f"scenario:{scenario.name}",
    )
    record.extra["seed"] = args.seed
    write_record(record, args.out)
    print(f"wrote {len(record.samples)} frames ({duration:g} s at {args.sps} sps) to {args.out}")
    print(f"markers: {len(record.markers)}")
    return EXIT_OK


def cmd_replay(args) -> int:
    record = read_record(args.infile)
    speed = None if args.speed == 0 else args.speed
    backend = acq.ReplayBackend.from_record(record, speed=speed)
    backend.initialize()
    backend.start_stream()
    t0 = time.monotonic()
    frames, _ = _collect_stream(backend, int(record.gain), len(record.samples))
    elapsed = time.monotonic() - t0
    print(f"replayed {len(frames)} frames ({len(frames) / record.sps:g} s of data) "
          f"in {elapsed:.2f} s wall time")
    if args.out:
        replayed = record_from_frames(frames, sps=record.sps, gain=record.gain,
                                      markers=record.markers, source=f"replay:{Path(args.infile).name}")
        write_record(replayed, args.out)
        print(f"re-recorded to {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    record = read_record(args.infile)
    report = analyze_record(record, args.report, channel=args.channel)
    if args.report == "alpha":
        print(f"{'ch':>3} {'label':>6} {'closed uV^2':>14} {'open uV^2':>14} {'ratio':>10}")
        for row in report.rows:
            print(f"{row['channel']:>3} {row['label']:>6} {row['closed_power']:>14.3f} "
                  f"{row['open_power']:>14.3f} {row['ratio']:>10.3f}")
        worst = min(row["ratio"] for row in report.rows)
        print(f"minimum ratio across channels: {worst:.3f}")
    else:
        print(f"artifact burst groups (channel {report.channel}):")
        for track in sorted(report.tracks):
            print(f"  {track}: {report.tracks[track]}")
    if args.out:
        report.write_table(args.out)
        print(f"table written to {args.out}")
    return EXIT_OK


def cmd_record(args) -> int:
    protocol: SessionProtocol = alpha_protocol(args.cycles)
    needed_s = sum(step.duration_s for step in protocol.steps)
    scenario = _resolve_scenario(args.scenario, None, args.sps, args.seed)
    pace = "realtime" if args.realtime else "unpaced"
    backend = acq.SimulatedBackend(scenario, pace=pace, stop_after_s=needed_s + 2.0)
    backend.initialize()
    acq.configure(backend, acq.StreamSettings(sps=args.sps, gain=args.gain))
    backend.start_stream()
    buffer = acq.RingBuffer(capacity=int((needed_s + 4) * args.sps))
    reader = buffer.register_reader()
    handle = acq.run_stream(backend, ConversionParams(gain=args.gain), buffer)
    try:
        record = run_session(
            protocol, reader,
            sps=args.sps, gain=float(args.gain),
            source=f"scenario:{scenario.name}",
        )
    finally:
        handle.stop()
        handle.join()
    record.extra["seed"] = args.seed
    write_record(record, args.out)
    state = "incomplete" if record.incomplete else "complete"
    print(f"session {protocol.name}: {len(record.samples)} frames, "
          f"{len(record.markers)} markers, {state}; wrote {args.out}")
    for marker in record.markers:
        frames = int(round((marker.t_end_s - marker.t_start_s) * args.sps))
        print(f"  {marker.label}: {marker.t_start_s:g}..{marker.t_end_s:g} s ({frames} frames)")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve

    print(f"serving on http://{args.bind}:{args.port} (data dir: {args.data_dir})")
    serve(args.data_dir, host=args.bind, port=args.port, ui_dir=args.ui_dir)
    return EXIT_OK


def _parse_columns(spec: str | None):
    if spec is None:
        return tuple(range(16))
    if "-" in spec and "," not in spec:
        lo, hi = spec.split("-", 1)
        return tuple(range(int(lo), int(hi) + 1))
    parts = [part.strip() for part in spec.split(",")]
    try:
        return tuple(int(part) for part in parts)
    except ValueError:
        return tuple(parts)


def cmd_ingest(args) -> int:
    spec = IngestSpec(sps=args.sps, channel_columns=_parse_columns(args.columns),
                      unit=args.unit, delimiter=args.delimiter)
    record = ingest_external(args.infile, spec)
    write_record(record, args.out)
    info = record.extra["ingest"]
    print(f"ingested {info['rows']} rows at {args.sps} sps "
          f"({info['skipped_rows']} skipped) into {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "analyze": cmd_analyze,
    "record": cmd_record,
    "serve": cmd_serve,
    "ingest": cmd_ingest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"eegrig {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _RUNTIME_ERRORS as exc:
        print(f"eegrig {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"eegrig {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
