"""Local control and streaming service for the operator console.

A small REST surface drives one stream and one session at a time; a
WebSocket pushes JSON messages: one-second sample batches (display-filtered
by default), cue changes, detector events, and status. Slow subscribers have
their oldest queued batch dropped and receive a skip report before the next
delivered batch: freshness over completeness, with accounting.

The service is local-only by design; binding to anything but loopback is an
explicit opt-in at launch.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from pathlib import Path

import anyio
import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse

from . import __version__, acquisition as acq, dsp
from .protocol import ConversionParams, DATA_RATES, GAINS, N_CHANNELS
from .session import (
    CueStep,
    SessionProtocol,
    SessionRecorder,
    alpha_protocol,
    analyze_record,
    marker_path,
    read_record,
    write_record,
)
from .simdevice import PRESET_NAMES, build_preset, load_scenario

DEFAULT_PORT = 8240
SUBSCRIBER_QUEUE_BATCHES = 8


class Subscriber:
    """One console connection's outbound queue with batch-skip accounting."""

    def __init__(self, status_source, max_batches: int = SUBSCRIBER_QUEUE_BATCHES):
        self._cond = threading.Condition()
        self._queue: deque[dict] = deque()
        self._samples_queued = 0
        self._pending_skip = 0
        self.max_batches = max_batches
        self.skipped_total = 0
        self.delivered_batches = 0
        self.pushed_batches = 0
        self.closed = False
        self._status_source = status_source

    def push(self, message: dict) -> None:
        with self._cond:
            if self.closed:
                return
            if message["type"] == "samples":
                self.pushed_batches += 1
                if self._samples_queued >= self.max_batches:
                    for i, queued in enumerate(self._queue):
                        if queued["type"] == "samples":
                            del self._queue[i]
                            self._samples_queued -= 1
                            self._pending_skip += 1
                            self.skipped_total += 1
                            break
                self._samples_queued += 1
            self._queue.append(message)
            self._cond.notify_all()

    def pop(self, timeout: float | None = None) -> dict | None:
        with self._cond:
            if not self._queue and not self.closed:
                self._cond.wait(timeout)
            if not self._queue:
                return None
            head = self._queue[0]
            if head["type"] == "samples" and self._pending_skip:
                skip_report = dict(self._status_source())
                skip_report["skipped_batches"] = self._pending_skip
                skip_report["skipped_total"] = self.skipped_total
                self._pending_skip = 0
                return skip_report
            message = self._queue.popleft()
            if message["type"] == "samples":
                self._samples_queued -= 1
                self.delivered_batches += 1
            return message

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class _Batcher(threading.Thread):
    """Single consumer that turns the frame stream into one-second batches,
    runs the live detectors, advances any active session, and fans messages
    out to subscribers."""

    def __init__(self, service: "Service", buffer: acq.RingBuffer, sps: int):
        super().__init__(name="eegrig-batcher", daemon=True)
        self.service = service
        self.sps = sps
        self.reader = buffer.register_reader()
        self.batches_produced = 0
        self._display_generation = -1
        self._display_bank: dsp.FilterBank | None = None
        self._artifact_bank = dsp.FilterBank(dsp.FilterSpec.bandpass(1.0, 40.0, sps=sps),
                                             n_channels=N_CHANNELS)
        self._burst_watch = [dsp.StreamingBurstDetector(sps, channel=ch) for ch in range(1, N_CHANNELS + 1)]
        self._alpha_watch = [dsp.AlphaPowerTracker(sps, channel=ch) for ch in range(1, N_CHANNELS + 1)]

    def _refresh_display_bank(self) -> None:
        generation, band = self.service.display_filter()
        if generation != self._display_generation:
            self._display_generation = generation
            if band == "raw":
                self._display_bank = None
            else:
                lo, hi = band
                self._display_bank = dsp.FilterBank(dsp.FilterSpec.bandpass(lo, hi, sps=self.sps),
                                                    n_channels=N_CHANNELS)

    def run(self) -> None:
        while True:
            block = self.reader.read_block(self.sps, timeout=5.0)
            pre, post = self._process(block.frames)
            if block.frames:
                self.batches_produced += 1
            for message in pre:
                self.service.broadcast(message)
            for message in post:
                self.service.broadcast(message)
            if block.terminal is not None:
                self.service.on_stream_end(block.terminal)
                return

    def _process(self, frames) -> tuple[list[dict], list[dict]]:
        if not frames:
            return [], []
        uv = np.vstack([f.uv for f in frames])
        seq0 = frames[0].seq
        batch_end_t = (frames[-1].seq + 1) / self.sps

        cues: list[dict] = []
        session_done = False
        recorder = self.service.active_recorder
        if recorder is not None:
            recorder.on_cue = lambda label, t: cues.append({"type": "cue", "label": label, "t_s": t})
            recorder.feed(frames)
            if recorder.done or self.service.session_stop_requested:
                session_done = True

        self._refresh_display_bank()
        display = uv if self._display_bank is None else self._display_bank.process(uv)

        events: list[dict] = []
        artifact_view = self._artifact_bank.process(uv)
        for ch in range(N_CHANNELS):
            for event in self._burst_watch[ch].process(artifact_view[:, ch]):
                events.append(_event_message(event))
            for event in self._alpha_watch[ch].process(uv[:, ch]):
                events.append(_event_message(event))

        samples_message = {
            "type": "samples",
            "seq0": seq0,
            "t0_s": seq0 / self.sps,
            "sps": self.sps,
            "channels": [display[:, ch].tolist() for ch in range(N_CHANNELS)],
            "raw_available": True,
            "alpha_power": [tracker.power for tracker in self._alpha_watch],
        }
        pre = [c for c in cues if c["t_s"] < batch_end_t]
        late = [c for c in cues if c["t_s"] >= batch_end_t]  # boundary == next batch start
        post = late + events
        if session_done:
            self.service.finish_session()
            post.append(self.service.status_message())
        return pre + [samples_message], post


def _event_message(event: dsp.DetectionEvent) -> dict:
    return {
        "type": "event",
        "kind": event.kind,
        "channel": event.channel,
        "t_start_s": event.t_start_s,
        "t_end_s": event.t_end_s,
        "magnitude_uv": event.magnitude_uv,
    }


class Service:
    """Control state machine and stream plumbing behind the HTTP surface."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.records_dir = self.data_dir / "records"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.RLock()
        self.subscribers: list[Subscriber] = []
        self.mode = "idle"
        self.stream_info: dict = {}
        self.handle: acq.StreamHandle | None = None
        self.batcher: _Batcher | None = None
        self.active_recorder: SessionRecorder | None = None
        self.session_info: dict | None = None
        self.session_stop_requested = False
        self.last_stream: dict | None = None
        self._filter_generation = 0
        self._filter_band: tuple[float, float] | str = (1.0, 40.0)
        self._notch = False
        self._record_counter = 0

    # -- filters --

    def display_filter(self):
        with self.lock:
            return self._filter_generation, self._filter_band

    def set_filters(self, band, notch: bool | None) -> None:
        with self.lock:
            if band is not None:
                self._filter_band = band
                self._filter_generation += 1
            if notch is not None:
                self._notch = notch

    # -- status --

    def status(self) -> dict:
        with self.lock:
            session = None
            if self.session_info is not None:
                session = dict(self.session_info)
                if self.active_recorder is not None:
                    session["cue"] = self.active_recorder.progress()
            return {
                "mode": self.mode,
                "version": __version__,
                "sps": self.stream_info.get("sps"),
                "gain": self.stream_info.get("gain"),
                "backend": self.stream_info.get("backend"),
                "scenario": self.stream_info.get("scenario"),
                "frames": self.handle.stats.frames if self.handle else 0,
                "desync_events": self.handle.stats.desync_events if self.handle else 0,
                "dropped_total": self.batcher.reader.dropped if self.batcher else 0,
                "batches": self.batcher.batches_produced if self.batcher else 0,
                "session": session,
                "last_stream": self.last_stream,
                "filters": {
                    "band": self._filter_band if isinstance(self._filter_band, str)
                    else list(self._filter_band),
                    "notch": self._notch,
                },
                "subscribers": len(self.subscribers),
                "records_dir": str(self.records_dir),
            }

    def status_message(self) -> dict:
        doc = self.status()
        doc["type"] = "status"
        return doc

    # -- subscribers --

    def subscribe(self) -> Subscriber:
        subscriber = Subscriber(self.status_message)
        with self.lock:
            self.subscribers.append(subscriber)
        subscriber.push(self.status_message())
        return subscriber

    def unsubscribe(self, subscriber: Subscriber) -> None:
        subscriber.close()
        with self.lock:
            if subscriber in self.subscribers:
                self.subscribers.remove(subscriber)

    def broadcast(self, message: dict) -> None:
        with self.lock:
            targets = list(self.subscribers)
        for subscriber in targets:
            subscriber.push(message)

    # -- stream lifecycle --

    def start_stream(self, body: dict) -> dict:
        with self.lock:
            if self.mode != "idle":
                raise _conflict("stream already running; stop it first")
            backend_kind = body.get("backend", "simulated")
            sps = int(body.get("sps", 250))
            gain = int(body.get("gain", 24))
            pace = body.get("pace", "realtime")
            seed = int(body.get("seed", 0))
            duration = body.get("duration_s")
            if sps not in DATA_RATES:
                raise _invalid(f"sps must be one of {DATA_RATES}")
            if gain not in GAINS:
                raise _invalid(f"gain must be one of {GAINS}")
            if pace not in ("realtime", "unpaced"):
                raise _invalid("pace must be 'realtime' or 'unpaced'")

            known_frames = None
            if backend_kind == "simulated":
                scenario_name = body.get("scenario", "alpha_test")
                try:
                    if scenario_name in PRESET_NAMES:
                        scenario = build_preset(scenario_name, duration_s=None, sps=sps, seed=seed)
                    else:
                        scenario = load_scenario(scenario_name)
                except (OSError, ValueError) as exc:
                    raise _invalid(f"scenario: {exc}") from None
                backend = acq.SimulatedBackend(scenario, pace=pace,
                                               stop_after_s=float(duration) if duration else None)
                backend.initialize()
                acq.configure(backend, acq.StreamSettings(sps=sps, gain=gain))
                scenario_label = scenario.name
                if duration:
                    known_frames = int(float(duration) * sps)
            elif backend_kind == "replay":
                ref = body.get("record")
                if not ref:
                    raise _invalid("replay needs a 'record' id or path")
                path = self._resolve_record(ref)
                if path is None:
                    raise _invalid(f"record {ref!r} not found")
                record = read_record(path)
                backend = acq.ReplayBackend.from_record(
                    record, speed=1.0 if pace == "realtime" else None)
                sps = record.sps
                gain = record.gain
                scenario_label = f"replay:{path.stem}"
                known_frames = len(record.samples)
            elif backend_kind == "hardware":
                raise _invalid("hardware backend not built in this stack")
            else:
                raise _invalid(f"unknown backend {backend_kind!r}")

            backend.start_stream()
            # A real-time stream only needs the 4 s display window; an unpaced
            # finite one floods faster than the batcher filters, so buffer the
            # whole known length and let the batcher drain at its own pace.
            capacity = 4 * sps
            if pace == "unpaced" and known_frames is not None:
                capacity = known_frames + 4 * sps
            buffer = acq.RingBuffer(capacity=capacity)
            self.batcher = _Batcher(self, buffer, sps)
            self.handle = acq.run_stream(
                backend, ConversionParams(gain=int(gain)), buffer)
            self.batcher.start()
            self.mode = "streaming"
            self.stream_info = {"backend": backend_kind, "scenario": scenario_label,
                                "sps": sps, "gain": gain, "pace": pace}
            return self.status()

    def stop_stream(self) -> dict:
        with self.lock:
            if self.mode != "streaming":
                raise _conflict("no stream running")
            if self.active_recorder is not None:
                raise _conflict("session active; stop the session first")
            handle, batcher = self.handle, self.batcher
        handle.stop()
        handle.join(10.0)
        batcher.join(10.0)
        return self.status()

    def on_stream_end(self, terminal: acq.TerminalStatus) -> None:
        """Called from the batcher when the frame stream terminates."""
        with self.lock:
            if self.active_recorder is not None:
                self.active_recorder.abort()
                self.finish_session()
            self.last_stream = {
                "frames": self.handle.stats.frames if self.handle else 0,
                "desync_events": self.handle.stats.desync_events if self.handle else 0,
                "batches": self.batcher.batches_produced if self.batcher else 0,
                "dropped_total": self.batcher.reader.dropped if self.batcher else 0,
                "terminal": {"clean": terminal.clean, "reason": terminal.reason,
                             "error": terminal.error},
            }
            self.mode = "idle"
            self.stream_info = {}
            self.handle = None
            self.batcher = None
        message = self.status_message()
        message["terminal"] = self.last_stream["terminal"]
        self.broadcast(message)

    # -- session lifecycle --

    def start_session(self, body: dict) -> dict:
        with self.lock:
            if self.mode != "streaming":
                raise _conflict("no stream running; start one first")
            if self.active_recorder is not None:
                raise _conflict("session already running")
            protocol = _parse_protocol(body)
            self._record_counter += 1
            record_id = f"{self._record_counter:04d}-{protocol.name}"
            self.session_stop_requested = False
            self.active_recorder = SessionRecorder(
                protocol,
                sps=self.stream_info["sps"],
                gain=float(self.stream_info["gain"]),
                source=f"{self.stream_info['backend']}:{self.stream_info.get('scenario')}",
            )
            self.session_info = {
                "name": protocol.name,
                "record_id": record_id,
                "active": True,
                "total_frames": self.active_recorder.total_frames,
                "steps": [{"label": s.label, "duration_s": s.duration_s} for s in protocol.steps],
            }
            return self.status()

    def stop_session(self) -> dict:
        with self.lock:
            if self.active_recorder is None:
                raise _conflict("no session running")
            self.session_stop_requested = True
        return self.status()

    def finish_session(self) -> None:
        """Finalize the active recorder into a record file. Batcher context."""
        with self.lock:
            recorder = self.active_recorder
            if recorder is None:
                return
            if self.session_stop_requested:
                recorder.abort()
            record = recorder.finish()
            record_id = self.session_info["record_id"]
            path = self.records_dir / f"{record_id}.csv"
            write_record(record, path)
            self.session_info = {"name": self.session_info["name"], "record_id": record_id,
                                 "active": False, "incomplete": record.incomplete}
            self.active_recorder = None
            self.session_stop_requested = False

    # -- records --

    def list_records(self) -> list[dict]:
        out = []
        for path in sorted(self.records_dir.glob("*.csv")):
            if path.name.endswith(".markers.csv"):
                continue
            out.append({"id": path.stem, "filename": path.name, "bytes": path.stat().st_size})
        return out

    def _resolve_record(self, ref: str) -> Path | None:
        candidate = self.records_dir / f"{ref}.csv"
        if "/" not in ref and ".." not in ref and candidate.exists():
            return candidate
        path = Path(ref)
        if path.is_file():
            return path
        return None

    def record_path(self, record_id: str) -> Path:
        if "/" in record_id or ".." in record_id:
            raise HTTPException(status_code=422, detail="bad record id")
        path = self.records_dir / f"{record_id}.csv"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"record {record_id!r} not found")
        return path

    def shutdown(self) -> None:
        with self.lock:
            recorder = self.active_recorder
            handle, batcher = self.handle, self.batcher
        if recorder is not None:
            self.session_stop_requested = True
        if handle is not None:
            handle.stop()
            handle.join(5.0)
        if batcher is not None and batcher.is_alive():
            batcher.join(5.0)
        for subscriber in list(self.subscribers):
            self.unsubscribe(subscriber)


def _conflict(reason: str) -> HTTPException:
    return HTTPException(status_code=409, detail=reason)


def _invalid(reason: str) -> HTTPException:
    return HTTPException(status_code=422, detail=reason)


def _parse_protocol(body: dict) -> SessionProtocol:
    named = body.get("protocol", "alpha")
    if isinstance(named, dict):
        try:
            steps = tuple(CueStep(s["label"], float(s["duration_s"])) for s in named["steps"])
            return SessionProtocol(named.get("name", "custom"), steps)
        except (KeyError, TypeError, ValueError) as exc:
            raise _invalid(f"bad protocol: {exc}") from None
    if named == "alpha":
        cycles = int(body.get("cycles", 3))
        if cycles < 1:
            raise _invalid("cycles must be >= 1")
        return alpha_protocol(cycles)
    raise _invalid(f"unknown protocol {named!r}")


def _parse_filter_band(value):
    if value is None:
        return None
    if value == "raw":
        return "raw"
    if isinstance(value, str):
        band = dsp.BANDS.get(value)
        if band is None:
            raise _invalid(f"unknown band name {value!r} (have {sorted(dsp.BANDS)} or 'raw')")
        return (band.lo_hz, band.hi_hz)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = float(value[0]), float(value[1])
        if not 0 < lo < hi:
            raise _invalid("band must satisfy 0 < lo < hi")
        return (lo, hi)
    raise _invalid("band must be 'raw', a named band, or [lo_hz, hi_hz]")


def create_app(data_dir: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    from contextlib import asynccontextmanager

    service = Service(data_dir)

    @asynccontextmanager
    async def lifespan(_app):
        yield
        service.shutdown()

    app = FastAPI(title="eegrig service", version=__version__, lifespan=lifespan)
    app.state.service = service

    @app.get("/status")
    def get_status():
        return service.status()

    @app.post("/stream/start")
    def stream_start(body: dict):
        return service.start_stream(body or {})

    @app.post("/stream/stop")
    def stream_stop():
        return service.stop_stream()

    @app.put("/filters")
    def put_filters(body: dict):
        band = _parse_filter_band(body.get("band"))
        notch = body.get("notch")
        if notch is not None and not isinstance(notch, bool):
            raise _invalid("notch must be a boolean")
        if band is None and notch is None:
            raise _invalid("nothing to change: give 'band' and/or 'notch'")
        service.set_filters(band, notch)
        return service.status()

    @app.post("/session/start")
    def session_start(body: dict):
        return service.start_session(body or {})

    @app.post("/session/stop")
    def session_stop():
        return service.stop_session()

    @app.get("/records")
    def records_index():
        return service.list_records()

    @app.get("/records/{record_id}")
    def record_meta(record_id: str):
        path = service.record_path(record_id)
        record = read_record(path)
        return {
            "id": record_id,
            "sps": record.sps,
            "gain": record.gain,
            "montage": list(record.montage),
            "source": record.source,
            "n_samples": len(record.samples),
            "duration_s": record.duration_s,
            "markers": [
                {"label": m.label, "t_start_s": m.t_start_s, "t_end_s": m.t_end_s}
                for m in record.markers
            ],
            "incomplete": record.incomplete,
            "quality_dropped": [list(q) for q in record.quality_dropped],
        }

    @app.get("/records/{record_id}/data")
    def record_data(record_id: str):
        return FileResponse(service.record_path(record_id), media_type="text/csv")

    @app.get("/records/{record_id}/markers")
    def record_markers(record_id: str):
        side = marker_path(service.record_path(record_id))
        if not side.exists():
            raise HTTPException(status_code=404, detail="no marker sidecar")
        return FileResponse(side, media_type="text/csv")

    @app.get("/records/{record_id}/analysis")
    def record_analysis(record_id: str, report: str = "alpha"):
        record = read_record(service.record_path(record_id))
        if report == "alpha":
            result = analyze_record(record, "alpha")
            return {"report": "alpha",
                    "header": list(result.TABLE_HEADER),
                    "rows": [list(row) for row in result.table()]}
        if report == "artifact":
            result = analyze_record(record, "artifact")
            return {"report": "artifact", "channel": result.channel,
                    "header": list(result.TABLE_HEADER),
                    "rows": [list(row) for row in result.table()]}
        raise _invalid("report must be 'alpha' or 'artifact'")

    @app.websocket("/stream")
    async def stream_socket(websocket: WebSocket):
        await websocket.accept()
        subscriber = service.subscribe()
        try:
            while True:
                message = await anyio.to_thread.run_sync(subscriber.pop, 1.0)
                if message is None:
                    if subscriber.closed:
                        break
                    continue
                await websocket.send_text(json.dumps(message))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            service.unsubscribe(subscriber)

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="console")

    return app


def serve(data_dir: str | Path, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
          log_level: str = "warning", ui_dir: str | Path | None = None) -> None:
    """Run the service under uvicorn; loopback-only unless host says otherwise."""
    import uvicorn

    uvicorn.run(create_app(data_dir, ui_dir=ui_dir), host=host, port=port, log_level=log_level)
