"""Clocked acquisition over a pluggable device backend.

One producer loop reads framed bytes from a backend, decodes and converts
them, and publishes timestamped frames into a bounded ring buffer that any
number of independent readers consume. The buffer overwrites oldest frames
when a reader falls behind and accounts for every overwritten-unread frame
per reader, so losing data is always visible, never silent.

Timestamps are frame arithmetic (seq / sps), never wall clock; pacing to
real time happens inside the simulated and replay backends.
"""

from __future__ import annotations

import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import protocol as proto
from .protocol import (
    Command,
    ConversionParams,
    DesyncError,
    Opcode,
    RegisterMap,
    encode_command,
)
from .simdevice import SignalScenario, SimulatedDevicePair


class BackendError(RuntimeError):
    """Backend cannot service the request."""


class BackendUnavailable(BackendError):
    """Declared backend with no implementation in this build."""


class EndOfData(BackendError):
    """Finite backend ran out of frames; the stream ends cleanly."""


class StreamStateError(RuntimeError):
    """Operation is illegal in the stream's current state."""


class ConfigurationError(RuntimeError):
    """Requested settings are invalid or the device read-back disagrees."""

    def __init__(self, message: str, mismatches: list[str] | None = None):
        self.mismatches = mismatches or []
        super().__init__(message)


class DeviceBackend(ABC):
    """Where frames come from: a simulator, a recorded file, or (one day) SPI."""

    sps: int

    @abstractmethod
    def initialize(self) -> None:
        """Reset the device, verify its identity, apply the base configuration."""

    @abstractmethod
    def start_stream(self) -> None: ...

    @abstractmethod
    def stop_stream(self) -> None: ...

    @abstractmethod
    def read_frame(self) -> bytes:
        """Block until data-ready, then return the next frame's bytes."""

    def transfer(self, data: bytes) -> bytes | None:
        """Full-duplex command exchange; optional (replay has no control path)."""
        raise BackendError(f"{type(self).__name__} has no command channel")


class SimulatedBackend(DeviceBackend):
    """The simulated converter pair, paced by a deadline timer or unpaced.

    Real-time pacing sleeps toward t0 + n/sps with catch-up (a late frame is
    produced immediately, never skipped), so long runs do not drift.
    `stop_after_s` makes the backend finite, for exactly-N-frame runs.
    """

    def __init__(self, scenario: SignalScenario, pace: str = "realtime",
                 stop_after_s: float | None = None):
        if pace not in ("realtime", "unpaced"):
            raise ValueError("pace must be 'realtime' or 'unpaced'")
        self.scenario = scenario
        self.sps = scenario.sps
        self.pace = pace
        self.pair = SimulatedDevicePair()
        self._frame_limit = None if stop_after_s is None else int(round(stop_after_s * scenario.sps))
        self._t0 = None
        self._frames_read = 0
        self._initialized = False
        self._streaming = False

    def transfer(self, data: bytes) -> bytes | None:
        return self.pair.handle_command(data)

    def initialize(self) -> None:
        self.transfer(encode_command(Command(Opcode.RESET)))
        ident = self.transfer(encode_command(Command(Opcode.RREG, address=0x00, count=0)))
        if ident != bytes([proto.DEVICE_ID]):
            raise BackendError(f"device identity check failed: got {ident!r}")
        rate = proto.config1_value(self.scenario.sps)
        self.transfer(encode_command(Command(Opcode.WREG, address=0x01, count=0, payload=bytes([rate]))))
        self._initialized = True

    def start_stream(self) -> None:
        if not self._initialized:
            raise BackendError("initialize() first")
        self.transfer(encode_command(Command(Opcode.START)))
        self.transfer(encode_command(Command(Opcode.RDATAC)))
        self._streaming = True
        self._frames_read = 0
        self._t0 = time.monotonic()

    def stop_stream(self) -> None:
        if self._streaming:
            self.transfer(encode_command(Command(Opcode.SDATAC)))
            self.transfer(encode_command(Command(Opcode.STOP)))
            self._streaming = False

    def read_frame(self) -> bytes:
        if not self._streaming:
            raise StreamStateError("read_frame outside start_stream/stop_stream")
        if self._frame_limit is not None and self._frames_read >= self._frame_limit:
            raise EndOfData(f"scenario limit of {self._frame_limit} frames reached")
        if self.pace == "realtime":
            deadline = self._t0 + (self._frames_read + 1) / self.sps
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        self._frames_read += 1
        return self.pair.next_frame(self.scenario)


class ReplayBackend(DeviceBackend):
    """Streams a recorded microvolt matrix back out as wire frames.

    `speed` scales pacing (1.0 = recorded rate); 0 or None means unpaced.
    Values are re-quantized through the record's own gain, which is exact
    for records this stack produced.
    """

    def __init__(self, samples: np.ndarray, sps: int, gain: int = 24,
                 vref_volts: float = 4.5, speed: float | None = 1.0):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != proto.N_CHANNELS:
            raise BackendError(f"replay needs an (n, {proto.N_CHANNELS}) matrix")
        self.samples = samples
        self.sps = sps
        self.params = ConversionParams(vref_volts=vref_volts, gain=gain)
        self.speed = speed
        self._raw = proto.microvolts_to_raw(samples, self.params, clamp=True)
        self._cursor = 0
        self._t0 = None
        self._streaming = False

    @classmethod
    def from_record(cls, record, speed: float | None = 1.0) -> "ReplayBackend":
        return cls(record.samples, record.sps, gain=int(record.gain),
                   vref_volts=record.vref_volts, speed=speed)

    def initialize(self) -> None:
        pass

    def start_stream(self) -> None:
        self._cursor = 0
        self._t0 = time.monotonic()
        self._streaming = True

    def stop_stream(self) -> None:
        self._streaming = False

    def read_frame(self) -> bytes:
        if not self._streaming:
            raise StreamStateError("read_frame outside start_stream/stop_stream")
        if self._cursor >= len(self._raw):
            raise EndOfData("record exhausted")
        if self.speed:
            deadline = self._t0 + (self._cursor + 1) / (self.sps * self.speed)
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        row = self._raw[self._cursor]
        self._cursor += 1
        status = proto.make_status()
        frame = proto.DataFrame(status=(status, status), channels=tuple(int(v) for v in row))
        return proto.encode_frame(frame)


class HardwareBackend(DeviceBackend):
    """The seam where an SPI driver would plug in. Not built."""

    sps = 250

    def __init__(self, *args, **kwargs):
        raise BackendUnavailable("hardware SPI backend not built; use simulated or replay")

    def initialize(self) -> None:  # pragma: no cover - unreachable
        raise BackendUnavailable("not built")

    def start_stream(self) -> None:  # pragma: no cover
        raise BackendUnavailable("not built")

    def stop_stream(self) -> None:  # pragma: no cover
        raise BackendUnavailable("not built")

    def read_frame(self) -> bytes:  # pragma: no cover
        raise BackendUnavailable("not built")


# --- Timed frames and the ring buffer --------------------------------------


@dataclass(frozen=True)
class TimedFrame:
    seq: int
    t_s: float  # always seq / sps
    uv: np.ndarray  # 16 converted microvolt values
    status: tuple[int, int]


@dataclass(frozen=True)
class TerminalStatus:
    clean: bool
    reason: str
    error: str | None = None


@dataclass
class Block:
    frames: list[TimedFrame]
    dropped_delta: int = 0
    timed_out: bool = False
    terminal: TerminalStatus | None = None


class RingReader:
    """One reader's cursor over the ring; created via RingBuffer.register_reader."""

    def __init__(self, buffer: "RingBuffer"):
        self._buffer = buffer
        self.read_seq = buffer.write_seq
        self.dropped = 0

    def read_block(self, n_frames: int, timeout: float | None = None) -> Block:
        return self._buffer._read_block(self, n_frames, timeout)

    def drain(self) -> Block:
        """Everything currently available, without waiting."""
        return self._buffer._read_block(self, None, 0.0)

    def close(self) -> None:
        self._buffer.unregister_reader(self)


class RingBuffer:
    """Bounded single-producer / multi-reader frame queue, overwrite-oldest.

    write_seq and each reader's read_seq are monotone counters; a reader
    that lags more than `capacity` frames has its cursor advanced and the
    overwritten frames added to its dropped count.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._slots: list[TimedFrame | None] = [None] * capacity
        self.write_seq = 0
        self._lock = threading.Lock()
        self._data_ready = threading.Condition(self._lock)
        self._readers: set[RingReader] = set()
        self.terminal: TerminalStatus | None = None

    def register_reader(self) -> RingReader:
        with self._lock:
            reader = RingReader(self)
            self._readers.add(reader)
            return reader

    def unregister_reader(self, reader: RingReader) -> None:
        with self._lock:
            self._readers.discard(reader)

    def publish(self, frame: TimedFrame) -> None:
        with self._data_ready:
            self._slots[self.write_seq % self.capacity] = frame
            self.write_seq += 1
            self._data_ready.notify_all()

    def close(self, status: TerminalStatus) -> None:
        with self._data_ready:
            if self.terminal is None:
                self.terminal = status
            self._data_ready.notify_all()

    def _reconcile(self, reader: RingReader) -> None:
        oldest = self.write_seq - self.capacity
        if reader.read_seq < oldest:
            reader.dropped += oldest - reader.read_seq
            reader.read_seq = oldest

    def _read_block(self, reader: RingReader, n_frames: int | None, timeout: float | None) -> Block:
        deadline = None if timeout is None else time.monotonic() + timeout
        frames: list[TimedFrame] = []
        dropped_before = reader.dropped
        timed_out = False
        with self._data_ready:
            while True:
                self._reconcile(reader)
                while reader.read_seq < self.write_seq and (n_frames is None or len(frames) < n_frames):
                    frames.append(self._slots[reader.read_seq % self.capacity])
                    reader.read_seq += 1
                if n_frames is not None and len(frames) >= n_frames:
                    break
                if n_frames is None or self.terminal is not None:
                    break
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    timed_out = True
                    break
                self._data_ready.wait(remaining)
            terminal = self.terminal if reader.read_seq >= self.write_seq else None
        return Block(frames=frames, dropped_delta=reader.dropped - dropped_before,
                     timed_out=timed_out, terminal=terminal)


def read_block(reader: RingReader, n_frames: int, timeout: float | None = None) -> Block:
    return reader.read_block(n_frames, timeout)


# --- The stream loop --------------------------------------------------------


@dataclass
class StreamStats:
    frames: int = 0
    desync_events: int = 0
    skipped_bytes: int = 0


class StreamHandle:
    """Running acquisition loop; stop() is safe from any thread."""

    def __init__(self, backend: DeviceBackend, buffer: RingBuffer, thread: threading.Thread,
                 stop_event: threading.Event, stats: StreamStats):
        self.backend = backend
        self.buffer = buffer
        self._thread = thread
        self._stop = stop_event
        self.stats = stats

    def stop(self) -> None:
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    @property
    def running(self) -> bool:
        return self._thread.is_alive()

    @property
    def status(self) -> TerminalStatus | None:
        return self.buffer.terminal


def _per_channel_scale(params) -> np.ndarray:
    if isinstance(params, ConversionParams):
        params = [params] * proto.N_CHANNELS
    if len(params) != proto.N_CHANNELS:
        raise ValueError(f"need 1 or {proto.N_CHANNELS} ConversionParams")
    return np.array([p.vref_volts * 1e6 / (p.gain * proto.SAMPLE_MAX) for p in params])


def run_stream(backend: DeviceBackend, params, buffer: RingBuffer) -> StreamHandle:
    """Start the producer loop: read, decode (resyncing on garbage), convert,
    stamp, publish. Terminates on stop(), end of data, or backend failure."""
    scale = _per_channel_scale(params)
    stop_event = threading.Event()
    stats = StreamStats()

    def loop() -> None:
        pending = bytearray()
        seq = 0
        in_desync = False
        terminal = TerminalStatus(clean=True, reason="stopped")
        try:
            while not stop_event.is_set():
                try:
                    pending += backend.read_frame()
                except EndOfData:
                    terminal = TerminalStatus(clean=True, reason="end-of-data")
                    break
                while len(pending) >= proto.FRAME_BYTES:
                    aligned = (pending[0] >> 4) == proto.SYNC_NIBBLE and (
                        pending[proto.DEVICE_FRAME_BYTES] >> 4) == proto.SYNC_NIBBLE
                    if not aligned:
                        if not in_desync:
                            stats.desync_events += 1
                            in_desync = True
                        del pending[0]
                        stats.skipped_bytes += 1
                        continue
                    in_desync = False
                    frame = proto.decode_frame(bytes(pending[:proto.FRAME_BYTES]))
                    del pending[:proto.FRAME_BYTES]
                    uv = np.asarray(frame.channels, dtype=float) * scale
                    buffer.publish(TimedFrame(seq=seq, t_s=seq / backend.sps, uv=uv,
                                              status=frame.status))
                    seq += 1
                    stats.frames += 1
        except DesyncError:
            # unreachable once alignment is pre-checked, kept as a backstop
            terminal = TerminalStatus(clean=False, reason="desync", error="unrecoverable desync")
        except Exception as exc:  # backend failure ends the stream with a diagnostic
            terminal = TerminalStatus(clean=False, reason="backend-error", error=str(exc))
        finally:
            try:
                backend.stop_stream()
            except Exception:
                pass
            buffer.close(terminal)

    thread = threading.Thread(target=loop, name="eegrig-stream", daemon=True)
    handle = StreamHandle(backend, buffer, thread, stop_event, stats)
    thread.start()
    return handle


# --- Configuration ----------------------------------------------------------


@dataclass(frozen=True)
class StreamSettings:
    sps: int = 250
    gain: int | tuple[int, ...] = 24
    mux: str | tuple[str, ...] = "normal"

    def per_channel(self, value, name: str) -> list:
        if isinstance(value, (tuple, list)):
            if len(value) != proto.N_CHANNELS:
                raise ConfigurationError(f"{name} list must have {proto.N_CHANNELS} entries")
            return list(value)
        return [value] * proto.N_CHANNELS


def configure(backend: DeviceBackend, settings: StreamSettings) -> RegisterMap:
    """Apply sps/gain/mux to the (stopped) device pair and verify by read-back.

    On the broadcast daisy chain channels k and k+8 share one CHnSET
    register, so their settings must agree.
    """
    if settings.sps not in proto.DATA_RATES:
        raise ConfigurationError(f"sps {settings.sps} not in {proto.DATA_RATES}")
    gains = settings.per_channel(settings.gain, "gain")
    muxes = settings.per_channel(settings.mux, "mux")
    for gain in gains:
        if gain not in proto.GAINS:
            raise ConfigurationError(f"gain {gain} not in {proto.GAINS}")
    for mux in muxes:
        try:
            proto.InputMux(mux)
        except ValueError:
            raise ConfigurationError(f"mux {mux!r} not one of normal/shorted/test_signal") from None
    clashes = [
        f"channels {k + 1} and {k + 9} share one register but ask for "
        f"gain {gains[k]}/{gains[k + 8]}, mux {muxes[k]}/{muxes[k + 8]}"
        for k in range(proto.CHANNELS_PER_DEVICE)
        if gains[k] != gains[k + 8] or muxes[k] != muxes[k + 8]
    ]
    if clashes:
        raise ConfigurationError("settings unachievable on the broadcast chain", clashes)

    backend.transfer(encode_command(Command(Opcode.SDATAC)))
    config1 = proto.config1_value(settings.sps)
    backend.transfer(encode_command(Command(Opcode.WREG, address=0x01, count=0, payload=bytes([config1]))))
    chnset = bytes(proto.chnset_value(gains[k], muxes[k]) for k in range(proto.CHANNELS_PER_DEVICE))
    backend.transfer(encode_command(Command(Opcode.WREG, address=0x05, count=7, payload=chnset)))

    readback = backend.transfer(encode_command(Command(Opcode.RREG, address=0x00, count=23)))
    applied = RegisterMap(readback)
    mismatches = []
    if applied.data_rate_sps != settings.sps:
        mismatches.append(f"CONFIG1: wanted {settings.sps} sps, read {applied.data_rate_sps}")
    for k in range(proto.CHANNELS_PER_DEVICE):
        if applied.channel_gain(k + 1) != gains[k]:
            mismatches.append(f"CH{k + 1}SET gain: wanted {gains[k]}, read {applied.channel_gain(k + 1)}")
        if applied.channel_mux(k + 1) is not proto.InputMux(muxes[k]):
            mismatches.append(f"CH{k + 1}SET mux: wanted {muxes[k]}, read {applied.channel_mux(k + 1).value}")
    if mismatches:
        raise ConfigurationError("read-back differs from intent", mismatches)
    return applied
