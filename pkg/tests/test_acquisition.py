"""Stream loop, ring-buffer drop accounting, resync, and device configuration."""

import time

import numpy as np
import pytest

from eegrig import acquisition as acq
from eegrig import protocol as proto
from eegrig.acquisition import (
    BackendError,
    BackendUnavailable,
    ConfigurationError,
    HardwareBackend,
    ReplayBackend,
    RingBuffer,
    SimulatedBackend,
    StreamSettings,
    configure,
    run_stream,
)
from eegrig.protocol import ConversionParams
from eegrig.simdevice import SignalScenario, Sine, build_preset


def empty_scenario(duration=60.0, sps=250):
    return SignalScenario("empty", duration, tuple(() for _ in range(16)), sps=sps)


def start_backend(scenario=None, pace="unpaced", stop_after_s=None):
    backend = SimulatedBackend(scenario or empty_scenario(), pace=pace, stop_after_s=stop_after_s)
    backend.initialize()
    backend.start_stream()
    return backend


class FaultInjectingBackend(acq.DeviceBackend):
    """Wraps a backend and splices garbage bytes into the byte stream."""

    def __init__(self, inner, inject_at_frame: int, garbage: bytes = b"\x00"):
        self.inner = inner
        self.sps = inner.sps
        self.inject_at_frame = inject_at_frame
        self.garbage = garbage
        self._count = 0

    def initialize(self):
        self.inner.initialize()

    def start_stream(self):
        self.inner.start_stream()

    def stop_stream(self):
        self.inner.stop_stream()

    def read_frame(self):
        chunk = self.inner.read_frame()
        if self._count == self.inject_at_frame:
            chunk = self.garbage + chunk
        self._count += 1
        return chunk


class FailingBackend(acq.DeviceBackend):
    sps = 250

    def initialize(self):
        pass

    def start_stream(self):
        pass

    def stop_stream(self):
        pass

    def read_frame(self):
        raise RuntimeError("bus fell over")


class TestRunStream:
    def test_exact_frame_count_and_order(self):
        backend = start_backend(stop_after_s=10.0)
        buffer = RingBuffer(capacity=4 * 250)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        frames = []
        while True:
            block = reader.read_block(250, timeout=5.0)
            frames.extend(block.frames)
            assert block.dropped_delta == 0
            if block.terminal is not None:
                break
        handle.join(5.0)
        assert len(frames) == 2500
        assert [f.seq for f in frames] == list(range(2500))
        assert all(f.t_s == f.seq / 250 for f in frames)
        assert handle.status.clean and handle.status.reason == "end-of-data"

    def test_sleeping_reader_drops_and_stays_ordered(self):
        backend = start_backend(stop_after_s=10.0)
        buffer = RingBuffer(capacity=4 * 250)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(10.0)  # let the whole 10 s of data flow while the reader sleeps
        block = reader.drain()
        assert block.dropped_delta == 2500 - 1000
        seqs = [f.seq for f in block.frames]
        assert seqs == sorted(seqs)
        assert len(seqs) == 1000
        assert seqs[0] == 1500  # oldest surviving frame

    def test_gap_report_matches_writer_side_arithmetic(self):
        backend = start_backend(stop_after_s=6.0)
        buffer = RingBuffer(capacity=500)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(10.0)
        predicted = buffer.write_seq - buffer.capacity  # reader never read
        block = reader.drain()
        assert block.dropped_delta == predicted == reader.dropped

    def test_two_readers_account_independently(self):
        backend = start_backend(stop_after_s=8.0)
        buffer = RingBuffer(capacity=1000)
        keeper = buffer.register_reader()
        sleeper = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        kept = []
        while True:
            block = keeper.read_block(200, timeout=5.0)
            kept.extend(block.frames)
            if block.terminal is not None:
                break
        handle.join(5.0)
        assert keeper.dropped == 0
        assert len(kept) == 2000
        lost = sleeper.drain()
        assert lost.dropped_delta == 1000

    def test_stop_is_clean_and_final(self):
        backend = start_backend()
        buffer = RingBuffer(capacity=1000)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        reader.read_block(50, timeout=5.0)
        handle.stop()
        handle.join(5.0)
        assert handle.status.clean and handle.status.reason == "stopped"
        tail = reader.drain()
        final_seq = buffer.write_seq
        assert tail.terminal is not None
        again = reader.read_block(10, timeout=0.1)
        assert again.frames == [] and again.terminal is not None
        assert buffer.write_seq == final_seq  # nothing published after stop

    def test_read_timeout_flags_partial_block(self):
        backend = start_backend(pace="realtime")
        buffer = RingBuffer(capacity=1000)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        block = reader.read_block(10_000, timeout=0.3)
        handle.stop()
        handle.join(5.0)
        assert block.timed_out
        assert 0 < len(block.frames) < 10_000

    def test_conversion_uses_params(self):
        scenario = SignalScenario("s", 4.0, tuple((Sine(10.0, 50.0),) for _ in range(16)))
        backend = start_backend(scenario, stop_after_s=0.2)
        buffer = RingBuffer(capacity=200)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(5.0)
        frames = reader.drain().frames
        # frame at t=0.025 s is index 6.25 -> not exact; check amplitude instead
        peak = max(abs(float(f.uv[0])) for f in frames)
        assert peak == pytest.approx(50.0, rel=0.02)

    def test_full_path_preserves_synthesis_within_half_lsb(self):
        # scenario microvolts -> raw frames -> decode -> convert back
        scenario = build_preset("alpha_test", duration_s=4.0, seed=6)
        backend = start_backend(scenario, stop_after_s=4.0)
        buffer = RingBuffer(capacity=1200)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(10.0)
        delivered = np.vstack([f.uv for f in reader.drain().frames])
        truth = scenario.render_block(0, len(delivered))
        half_lsb = ConversionParams().lsb_uv / 2
        assert np.max(np.abs(delivered - truth)) <= half_lsb * (1 + 1e-9)

    def test_backend_failure_reports_diagnostic(self):
        buffer = RingBuffer(capacity=100)
        backend = FailingBackend()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(5.0)
        assert handle.status is not None
        assert not handle.status.clean
        assert "bus fell over" in handle.status.error

    def test_resync_after_injected_garbage_byte(self):
        inner = start_backend(stop_after_s=2.0)
        backend = FaultInjectingBackend(inner, inject_at_frame=100)
        buffer = RingBuffer(capacity=1000)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(5.0)
        frames = reader.drain().frames
        assert handle.stats.desync_events == 1
        assert handle.stats.skipped_bytes == 1
        # at most one frame sacrificed to realignment
        assert len(frames) >= 499
        seqs = [f.seq for f in frames]
        assert seqs == sorted(seqs)

    def test_realtime_pacing_advances_with_wall_clock(self):
        backend = start_backend(pace="realtime", stop_after_s=1.0)
        buffer = RingBuffer(capacity=500)
        reader = buffer.register_reader()
        t0 = time.monotonic()
        handle = run_stream(backend, ConversionParams(), buffer)
        handle.join(5.0)
        elapsed = time.monotonic() - t0
        assert len(reader.drain().frames) == 250
        assert elapsed == pytest.approx(1.0, abs=0.25)

    @pytest.mark.soak
    def test_keep_up_reader_ten_minutes(self):
        backend = start_backend(pace="realtime", stop_after_s=600.0)
        buffer = RingBuffer(capacity=4 * 250)
        reader = buffer.register_reader()
        handle = run_stream(backend, ConversionParams(), buffer)
        total = 0
        last_seq = -1
        while True:
            block = reader.read_block(250, timeout=5.0)
            for frame in block.frames:
                assert frame.seq == last_seq + 1
                last_seq = frame.seq
            total += len(block.frames)
            assert block.dropped_delta == 0
            if block.terminal is not None:
                break
        handle.join(10.0)
        assert total == 150_000
        assert reader.dropped == 0


class TestBackends:
    def test_initialize_verifies_identity(self):
        backend = SimulatedBackend(empty_scenario())
        backend.initialize()  # would raise on an ID mismatch
        assert backend.pair.registers[0]["ID"] == proto.DEVICE_ID

    def test_read_before_start_is_state_error(self):
        backend = SimulatedBackend(empty_scenario())
        backend.initialize()
        with pytest.raises(acq.StreamStateError):
            backend.read_frame()

    def test_replay_round_trips_quantized_samples(self):
        rng = np.random.default_rng(0)
        raw = rng.integers(-(2**23), 2**23, size=(100, 16))
        params = ConversionParams()
        uv = proto.raw_to_microvolts(raw, params)
        backend = ReplayBackend(uv, sps=250, gain=24, speed=None)
        backend.initialize()
        backend.start_stream()
        out = [proto.decode_frame(backend.read_frame()).channels for _ in range(100)]
        assert np.array_equal(np.array(out), raw)
        with pytest.raises(acq.EndOfData):
            backend.read_frame()

    def test_replay_has_no_command_channel(self):
        backend = ReplayBackend(np.zeros((10, 16)), sps=250)
        with pytest.raises(BackendError):
            configure(backend, StreamSettings())

    def test_hardware_backend_is_declared_not_built(self):
        with pytest.raises(BackendUnavailable):
            HardwareBackend()


class TestConfigure:
    def test_round_trip_through_simulated_pair(self):
        backend = SimulatedBackend(empty_scenario())
        backend.initialize()
        applied = configure(backend, StreamSettings(sps=250, gain=24, mux="normal"))
        assert applied.data_rate_sps == 250
        for ch in range(1, 9):
            assert applied.channel_gain(ch) == 24
            assert applied.channel_mux(ch) is proto.InputMux.NORMAL

    def test_nondefault_settings_apply(self):
        backend = SimulatedBackend(empty_scenario(sps=500))
        backend.initialize()
        applied = configure(backend, StreamSettings(sps=500, gain=12, mux="shorted"))
        assert applied.data_rate_sps == 500
        assert applied.channel_gain(3) == 12
        assert applied.channel_mux(5) is proto.InputMux.SHORTED

    def test_test_signal_mux_reaches_frames(self):
        scenario = empty_scenario()
        backend = SimulatedBackend(scenario, stop_after_s=0.1)
        backend.initialize()
        configure(backend, StreamSettings(sps=250, gain=24, mux="test_signal"))
        backend.start_stream()
        frame = proto.decode_frame(backend.read_frame())
        assert all(abs(v) > 0 for v in frame.channels)

    def test_invalid_gain_rejected_before_any_command(self):
        backend = SimulatedBackend(empty_scenario())
        backend.initialize()
        before = backend.pair.registers[0].dump()
        with pytest.raises(ConfigurationError):
            configure(backend, StreamSettings(gain=5))
        assert backend.pair.registers[0].dump() == before

    def test_per_channel_lists_must_agree_across_the_chain(self):
        backend = SimulatedBackend(empty_scenario())
        backend.initialize()
        gains = [24] * 8 + [12] * 8
        with pytest.raises(ConfigurationError) as err:
            configure(backend, StreamSettings(gain=tuple(gains)))
        assert err.value.mismatches

    def test_matching_per_channel_lists_accepted(self):
        backend = SimulatedBackend(empty_scenario())
        backend.initialize()
        gains = tuple([8] * 16)
        applied = configure(backend, StreamSettings(gain=gains))
        assert applied.channel_gain(1) == 8
