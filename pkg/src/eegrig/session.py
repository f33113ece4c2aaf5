"""Cued experiment protocols, the canonical record format, ingestion, and analysis.

A session advances cue steps on the frame clock (never wall time), records
every delivered frame, and writes cue markers whose boundaries land exactly
on frame timestamps. Records serialize to a diffable CSV with `#`-prefixed
metadata lines plus a marker sidecar, round-tripping bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .dsp import (
    BANDS,
    BurstDetectorConfig,
    FilterSpec,
    alpha_ratio,
    count_artifact_bursts,
    filter_offline,
)
from .protocol import N_CHANNELS
from .simdevice import Marker

DEFAULT_MONTAGE = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3",
    "C3", "Cz", "C4", "T4", "P3", "Pz", "P4", "O1",
)

CHANNEL_COLUMNS = tuple(f"ch{k:02d}_uV" for k in range(1, N_CHANNELS + 1))
HEADER_ROW = "t_s," + ",".join(CHANNEL_COLUMNS)
FORMAT_TAG = "eegrig-record v1"

ALPHA_CUE_LABELS = ("eyes_closed", "eyes_open")


class RecordFormatError(ValueError):
    """Record file is malformed; message carries line/field diagnostics."""


class IngestError(ValueError):
    """External table cannot be mapped onto a record."""


class SessionAbort(RuntimeError):
    """Stream ended before the protocol finished."""


@dataclass(frozen=True)
class CueStep:
    label: str
    duration_s: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"cue step {self.label!r} needs a positive duration")


@dataclass(frozen=True)
class SessionProtocol:
    name: str
    steps: tuple[CueStep, ...]
    montage: tuple[str, ...] = DEFAULT_MONTAGE

    def __post_init__(self):
        if len(self.montage) != N_CHANNELS:
            raise ValueError(f"montage needs {N_CHANNELS} labels")
        if len(set(self.montage)) != len(self.montage):
            raise ValueError("montage labels must be unique")


def alpha_protocol(cycles: int = 3, epoch_s: float = 5.0) -> SessionProtocol:
    """The eyes-closed/eyes-open alternation: `cycles` x [closed, open]."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    steps = []
    for _ in range(cycles):
        steps.append(CueStep("eyes_closed", epoch_s))
        steps.append(CueStep("eyes_open", epoch_s))
    return SessionProtocol(name=f"alpha_x{cycles}", steps=tuple(steps))


@dataclass
class SessionRecord:
    """Timestamped microvolt matrix plus cue markers: the unit of recording,
    replay, and analysis. `t_s[i]` is always (seq0 + i) / sps."""

    sps: int
    samples: np.ndarray  # (n, 16) float64 microvolts
    markers: tuple[Marker, ...] = ()
    gain: float = 24.0
    vref_volts: float = 4.5
    montage: tuple[str, ...] = DEFAULT_MONTAGE
    source: str = "unknown"
    start_time: str | None = None
    software_version: str = __version__
    seq0: int = 0
    quality_dropped: tuple[tuple[float, float], ...] = ()
    incomplete: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != N_CHANNELS:
            raise ValueError(f"samples must be (n, {N_CHANNELS})")
        self.markers = tuple(self.markers)
        self.montage = tuple(self.montage)
        self.quality_dropped = tuple((float(a), float(b)) for a, b in self.quality_dropped)
        span_end = (self.seq0 + len(self.samples)) / self.sps
        for marker in self.markers:
            if marker.t_start_s < self.seq0 / self.sps - 1e-9 or marker.t_end_s > span_end + 1e-9:
                raise ValueError(f"marker {marker.label!r} outside the record span")

    @property
    def t_s(self) -> np.ndarray:
        return (self.seq0 + np.arange(len(self.samples))) / self.sps

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sps

    def __eq__(self, other):
        if not isinstance(other, SessionRecord):
            return NotImplemented
        return (
            self.sps == other.sps
            and self.gain == other.gain
            and self.vref_volts == other.vref_volts
            and self.montage == other.montage
            and self.source == other.source
            and self.start_time == other.start_time
            and self.software_version == other.software_version
            and self.seq0 == other.seq0
            and self.markers == other.markers
            and self.quality_dropped == other.quality_dropped
            and self.incomplete == other.incomplete
            and self.extra == other.extra
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples, equal_nan=True)
        )


def record_from_frames(frames: Sequence, *, sps: int, gain: float = 24.0,
                       vref_volts: float = 4.5, montage=DEFAULT_MONTAGE,
                       source: str = "unknown", markers: Sequence[Marker] = (),
                       start_time: str | None = None) -> SessionRecord:
    """Assemble a record from contiguous TimedFrames (gaps are rejected)."""
    if frames:
        seqs = [f.seq for f in frames]
        if seqs != list(range(seqs[0], seqs[0] + len(seqs))):
            raise ValueError("frames are not contiguous; record them through run_session")
        samples = np.vstack([f.uv for f in frames])
        seq0 = seqs[0]
    else:
        samples = np.zeros((0, N_CHANNELS))
        seq0 = 0
    return SessionRecord(sps=sps, samples=samples, markers=tuple(markers), gain=gain,
                         vref_volts=vref_volts, montage=tuple(montage), source=source,
                         start_time=start_time, seq0=seq0)


# --- Cued session runner -----------------------------------------------------


class SessionRecorder:
    """Incremental session state: feed delivered frames, collect cue
    notifications and recorded samples, finish into a SessionRecord.

    The cue schedule is frame-counted from the first fed frame. Feeding
    happens from exactly one thread (the session loop or the service's
    batcher), which is what makes cue/batch ordering deterministic.
    """

    def __init__(self, protocol: SessionProtocol, *, sps: int, gain: float = 24.0,
                 vref_volts: float = 4.5, source: str = "live",
                 start_time: str | None = None,
                 on_cue: Callable[[str, float], None] | None = None):
        self.protocol = protocol
        self.sps = sps
        self.gain = gain
        self.vref_volts = vref_volts
        self.source = source
        self.start_time = start_time
        self.on_cue = on_cue
        self.step_frames = [int(round(step.duration_s * sps)) for step in protocol.steps]
        self.total_frames = sum(self.step_frames)
        self.seq0: int | None = None
        self.incomplete = False
        self.frames_fed = 0
        self._delivered: dict[int, np.ndarray] = {}
        self._boundaries_emitted = -1

    @property
    def done(self) -> bool:
        if self.total_frames == 0:
            return True
        return bool(self._delivered) and max(self._delivered) >= self.total_frames - 1

    def _emit_cues(self, up_to_offset: int) -> None:
        if self.on_cue is None or self.seq0 is None:
            return
        cum = 0
        for index, step in enumerate(self.protocol.steps):
            if index <= self._boundaries_emitted:
                cum += self.step_frames[index]
                continue
            if cum <= up_to_offset:
                self.on_cue(step.label, (self.seq0 + cum) / self.sps)
                self._boundaries_emitted = index
            cum += self.step_frames[index]

    def feed(self, frames) -> None:
        for frame in frames:
            if self.seq0 is None:
                self.seq0 = frame.seq
                self._emit_cues(0)
            offset = frame.seq - self.seq0
            if offset < self.total_frames:
                self._delivered[offset] = frame.uv
            self.frames_fed = offset + 1
            self._emit_cues(offset)

    def progress(self) -> dict:
        """Current step and remaining time, for status reconstruction."""
        fed = self.frames_fed
        cum = 0
        for index, (step, count) in enumerate(zip(self.protocol.steps, self.step_frames)):
            if fed < cum + count:
                return {
                    "step_index": index,
                    "label": step.label,
                    "step_remaining_s": (cum + count - fed) / self.sps,
                    "frames_fed": fed,
                    "total_frames": self.total_frames,
                }
            cum += count
        return {"step_index": len(self.protocol.steps), "label": None,
                "step_remaining_s": 0.0, "frames_fed": fed, "total_frames": self.total_frames}

    def abort(self) -> None:
        """The stream ended (or the operator stopped) before the schedule did."""
        if not self.done:
            self.incomplete = True

    def finish(self) -> SessionRecord:
        seq0 = self.seq0 if self.seq0 is not None else 0
        n = max(self._delivered) + 1 if self._delivered else 0
        samples = np.zeros((n, N_CHANNELS))
        quality: list[tuple[float, float]] = []
        gap_start: int | None = None
        for offset in range(n):
            if offset in self._delivered:
                samples[offset] = self._delivered[offset]
                if gap_start is not None:
                    quality.append(((seq0 + gap_start) / self.sps, (seq0 + offset) / self.sps))
                    gap_start = None
            elif gap_start is None:
                gap_start = offset
        if gap_start is not None:
            quality.append(((seq0 + gap_start) / self.sps, (seq0 + n) / self.sps))

        markers = []
        cum = 0
        for step, count in zip(self.protocol.steps, self.step_frames):
            start, end = cum, cum + count
            if start >= n:
                break
            markers.append(Marker(step.label, (seq0 + start) / self.sps,
                                  (seq0 + min(end, n)) / self.sps))
            cum = end

        return SessionRecord(
            sps=self.sps, samples=samples, markers=tuple(markers), gain=self.gain,
            vref_volts=self.vref_volts, montage=self.protocol.montage, source=self.source,
            start_time=self.start_time, seq0=seq0, quality_dropped=tuple(quality),
            incomplete=self.incomplete,
        )


def run_session(protocol: SessionProtocol, reader, sink: str | Path | None = None, *,
                sps: int, gain: float = 24.0, vref_volts: float = 4.5,
                source: str = "live", start_time: str | None = None,
                on_cue: Callable[[str, float], None] | None = None,
                read_timeout_s: float = 10.0) -> SessionRecord:
    """Drive the cue schedule off the frame clock while recording the stream.

    Cue boundaries fall on exact frame timestamps. Dropped frames are
    zero-filled and logged as quality intervals; a stream that dies early
    yields a truncated record flagged incomplete.
    """
    recorder = SessionRecorder(protocol, sps=sps, gain=gain, vref_volts=vref_volts,
                               source=source, start_time=start_time, on_cue=on_cue)
    while not recorder.done:
        block = reader.read_block(sps, timeout=read_timeout_s)
        recorder.feed(block.frames)
        if recorder.done:
            break
        if block.terminal is not None or (block.timed_out and not block.frames):
            recorder.abort()
            break
    record = recorder.finish()
    if sink is not None:
        write_record(record, sink)
    return record


# --- Record file format -------------------------------------------------------


def marker_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".markers.csv")


def _format_float(value: float) -> str:
    return repr(float(value))


def write_record(record: SessionRecord, path: str | Path) -> Path:
    """Write the record CSV and its marker sidecar; lossless round trip."""
    path = Path(path)
    lines = [f"# {FORMAT_TAG}"]

    def meta(key, value):
        lines.append(f"# {key} = {value}")

    meta("sps", record.sps)
    meta("gain", _format_float(record.gain))
    meta("vref_volts", _format_float(record.vref_volts))
    meta("montage", ",".join(record.montage))
    meta("source", record.source)
    meta("seq0", record.seq0)
    meta("software_version", record.software_version)
    if record.start_time is not None:
        meta("start_time", record.start_time)
    if record.incomplete:
        meta("incomplete", "true")
    if record.quality_dropped:
        meta("quality_dropped",
             ";".join(f"{_format_float(a)}:{_format_float(b)}" for a, b in record.quality_dropped))
    if record.extra:
        meta("extra", json.dumps(record.extra, sort_keys=True))
    lines.append(HEADER_ROW)
    t = record.t_s
    for i in range(len(record.samples)):
        row = [_format_float(t[i])]
        row.extend(_format_float(v) for v in record.samples[i])
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")

    side = ["label,t_start_s,t_end_s"]
    for marker in record.markers:
        side.append(f"{marker.label},{_format_float(marker.t_start_s)},{_format_float(marker.t_end_s)}")
    marker_path(path).write_text("\n".join(side) + "\n")
    return path


def _parse_metadata(lines: list[tuple[int, str]]) -> dict[str, str]:
    meta = {}
    for _, line in lines:
        body = line[1:].strip()
        if "=" in body:
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
    return meta


def read_record(path: str | Path) -> SessionRecord:
    """Parse a record CSV (+ marker sidecar); the exact inverse of write_record."""
    path = Path(path)
    raw_lines = path.read_text().splitlines()
    meta_lines = []
    header_index = None
    for i, line in enumerate(raw_lines):
        if line.startswith("#"):
            meta_lines.append((i + 1, line))
        elif line.strip():
            header_index = i
            break
    if header_index is None:
        raise RecordFormatError(f"{path.name}: no header row found")
    header = raw_lines[header_index]
    expected = HEADER_ROW.split(",")
    got = header.split(",")
    for column in expected:
        if column not in got:
            raise RecordFormatError(f"{path.name} line {header_index + 1}: missing column {column!r}")
    if got != expected:
        raise RecordFormatError(f"{path.name} line {header_index + 1}: columns must be exactly {HEADER_ROW}")

    meta = _parse_metadata(meta_lines)
    for key in ("sps", "gain"):
        if key not in meta:
            raise RecordFormatError(f"{path.name}: metadata line '# {key} = ...' is required")
    sps = int(meta["sps"])
    seq0 = int(meta.get("seq0", 0))

    samples = []
    expected_t0: float | None = None
    for line_no, line in enumerate(raw_lines[header_index + 1:], start=header_index + 2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 1 + N_CHANNELS:
            raise RecordFormatError(f"{path.name} line {line_no}: expected {1 + N_CHANNELS} fields, got {len(cells)}")
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise RecordFormatError(f"{path.name} line {line_no}: {exc}") from None
        i = len(samples)
        expected_t = (seq0 + i) / sps
        if expected_t0 is None:
            expected_t0 = values[0]
            if abs(values[0] - expected_t) > 1e-9:
                raise RecordFormatError(
                    f"{path.name} line {line_no}: t_s {values[0]} does not match seq0/sps {expected_t}"
                )
        elif abs(values[0] - expected_t) > 1e-9:
            raise RecordFormatError(
                f"{path.name} line {line_no}: t_s must increase by exactly 1/sps "
                f"(got {values[0]}, expected {expected_t})"
            )
        samples.append(values[1:])

    markers = []
    side = marker_path(path)
    if side.exists():
        side_lines = side.read_text().splitlines()
        if not side_lines or side_lines[0] != "label,t_start_s,t_end_s":
            raise RecordFormatError(f"{side.name}: expected header 'label,t_start_s,t_end_s'")
        for line_no, line in enumerate(side_lines[1:], start=2):
            if not line.strip():
                continue
            cells = line.split(",")
            if len(cells) != 3:
                raise RecordFormatError(f"{side.name} line {line_no}: expected 3 fields")
            try:
                markers.append(Marker(cells[0], float(cells[1]), float(cells[2])))
            except ValueError as exc:
                raise RecordFormatError(f"{side.name} line {line_no}: {exc}") from None

    quality = []
    if "quality_dropped" in meta and meta["quality_dropped"]:
        for part in meta["quality_dropped"].split(";"):
            a, b = part.split(":")
            quality.append((float(a), float(b)))

    return SessionRecord(
        sps=sps,
        samples=np.array(samples, dtype=float).reshape(len(samples), N_CHANNELS),
        markers=tuple(markers),
        gain=float(meta["gain"]),
        vref_volts=float(meta.get("vref_volts", 4.5)),
        montage=tuple(meta["montage"].split(",")) if "montage" in meta else DEFAULT_MONTAGE,
        source=meta.get("source", "unknown"),
        start_time=meta.get("start_time"),
        software_version=meta.get("software_version", __version__),
        seq0=seq0,
        quality_dropped=tuple(quality),
        incomplete=meta.get("incomplete", "false") == "true",
        extra=json.loads(meta["extra"]) if "extra" in meta else {},
    )


# --- External table ingestion --------------------------------------------------


@dataclass(frozen=True)
class IngestSpec:
    """How to read a foreign delimited table: rate, where the 16 channels
    live (column names or 0-based indices), and the unit they carry."""

    sps: int
    channel_columns: tuple = tuple(range(N_CHANNELS))
    unit: str = "uV"
    delimiter: str = ","
    has_header: bool | None = None  # None: sniff the first row

    def __post_init__(self):
        if self.sps <= 0:
            raise ValueError("sps must be positive")
        if len(self.channel_columns) != N_CHANNELS:
            raise ValueError(f"channel_columns needs {N_CHANNELS} entries")
        if self.unit not in ("uV", "V"):
            raise ValueError("unit must be 'uV' or 'V'")


def ingest_external(path: str | Path, spec: IngestSpec) -> SessionRecord:
    """Normalize a delimited table into a record at the stated sps and uV.

    Rows with unparseable cells are skipped; the count lands in
    record.extra['ingest']['skipped_rows'].
    """
    path = Path(path)
    rows = [
        line for line in path.read_text().splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        raise IngestError(f"{path.name}: no data rows")

    by_name = any(isinstance(c, str) for c in spec.channel_columns)
    first_cells = rows[0].split(spec.delimiter)
    has_header = spec.has_header
    if has_header is None:
        def _is_number(cell):
            try:
                float(cell)
                return True
            except ValueError:
                return False
        has_header = not all(_is_number(c) for c in first_cells)
    if by_name and not has_header:
        raise IngestError("named channel_columns need a header row")

    if by_name:
        names = [c.strip() for c in first_cells]
        try:
            indices = [names.index(str(c)) for c in spec.channel_columns]
        except ValueError as exc:
            raise IngestError(f"{path.name}: {exc}") from None
    else:
        indices = [int(c) for c in spec.channel_columns]

    data_rows = rows[1:] if has_header else rows
    needed = max(indices) + 1
    scale = 1e6 if spec.unit == "V" else 1.0
    samples = []
    skipped = 0
    for row_no, line in enumerate(data_rows, start=1):
        cells = line.split(spec.delimiter)
        if len(cells) < needed:
            raise IngestError(
                f"{path.name} data row {row_no}: {len(cells)} columns, need at least {needed}"
            )
        try:
            samples.append([float(cells[i]) * scale for i in indices])
        except ValueError:
            skipped += 1
    if not samples:
        raise IngestError(f"{path.name}: every row failed to parse")

    return SessionRecord(
        sps=spec.sps,
        samples=np.array(samples, dtype=float),
        source=f"ingest:{path.name}",
        extra={"ingest": {"skipped_rows": skipped, "rows": len(samples), "unit": spec.unit}},
    )


# --- Analysis reports -----------------------------------------------------------


@dataclass
class AlphaReport:
    """Per-channel closed/open alpha power plus zero-phase display traces."""

    rows: list[dict]
    filtered: np.ndarray
    sps: int
    band_name: str = "alpha_observed"

    TABLE_HEADER = ("channel", "label", "closed_power_uV2", "open_power_uV2", "ratio")

    def table(self) -> list[tuple]:
        return [
            (r["channel"], r["label"], r["closed_power"], r["open_power"], r["ratio"])
            for r in self.rows
        ]

    def write_table(self, path: str | Path) -> Path:
        path = Path(path)
        lines = [",".join(self.TABLE_HEADER)]
        for row in self.table():
            lines.append(",".join(str(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path


@dataclass
class ArtifactReport:
    """Burst-group counts per marker track plus zero-phase display traces."""

    tracks: dict[str, list[int]]
    channel: int
    filtered: np.ndarray
    sps: int

    TABLE_HEADER = ("track", "group_index", "burst_count")

    def table(self) -> list[tuple]:
        rows = []
        for track in sorted(self.tracks):
            for index, count in enumerate(self.tracks[track]):
                rows.append((track, index, count))
        return rows

    def write_table(self, path: str | Path) -> Path:
        path = Path(path)
        lines = [",".join(self.TABLE_HEADER)]
        for row in self.table():
            lines.append(",".join(str(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path


def analyze_record(record: SessionRecord, report: str, *, channel: int | None = None,
                   burst_config: BurstDetectorConfig = BurstDetectorConfig()):
    """Run the alpha or artifact validation analysis over a record."""
    if report == "alpha":
        rows = []
        for ch in range(1, N_CHANNELS + 1):
            result = alpha_ratio(record, ch)
            rows.append({
                "channel": ch,
                "label": record.montage[ch - 1],
                "closed_power": result["closed_power"],
                "open_power": result["open_power"],
                "ratio": result["ratio"],
            })
        filtered = filter_offline(
            FilterSpec.bandpass(BANDS["alpha_filter"].lo_hz, BANDS["alpha_filter"].hi_hz,
                                sps=record.sps),
            record.samples,
        )
        return AlphaReport(rows=rows, filtered=filtered, sps=record.sps)

    if report == "artifact":
        if channel is None:
            channel = record.montage.index("Fz") + 1 if "Fz" in record.montage else 1
        filtered = filter_offline(
            FilterSpec.bandpass(BANDS["artifact_band"].lo_hz, BANDS["artifact_band"].hi_hz,
                                sps=record.sps),
            record.samples,
        )
        column = filtered[:, channel - 1]
        t0 = record.seq0 / record.sps
        track_labels = sorted({m.label for m in record.markers if m.label not in ALPHA_CUE_LABELS})
        tracks: dict[str, list[int]] = {}
        if track_labels:
            for label in track_labels:
                counts: list[int] = []
                for marker in record.markers:
                    if marker.label != label:
                        continue
                    i0 = int(round((marker.t_start_s - t0) * record.sps))
                    i1 = int(round((marker.t_end_s - t0) * record.sps))
                    counts.extend(count_artifact_bursts(column[i0:i1], record.sps, burst_config))
                tracks[label] = counts
        else:
            tracks["all"] = count_artifact_bursts(column, record.sps, burst_config)
        return ArtifactReport(tracks=tracks, channel=channel, filtered=filtered, sps=record.sps)

    raise ValueError(f"unknown report kind {report!r} (alpha or artifact)")
