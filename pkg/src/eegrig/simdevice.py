"""Register-semantic simulation of the daisy-chained converter pair, plus scripted signals.

The device half implements the command state machine (reset, start/stop,
continuous-read) over two RegisterMaps and clocks out wire-exact 54-byte
frames. The signal half evaluates declarative per-channel component lists
(sines, gated sines, artifact burst trains, noise, mains hum, drift) on the
sample grid, deterministically for a given seed.

Simulated time is frame-counted; pacing to wall-clock time belongs to the
acquisition backend. Past `duration_s` the scenario repeats (frame index
modulo scenario length) so streams can run indefinitely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .protocol import (
    CHANNELS_PER_DEVICE,
    N_CHANNELS,
    SAMPLE_MAX,
    SAMPLE_MIN,
    DataFrame,
    Opcode,
    RegisterMap,
    decode_command,
    encode_frame,
    make_status,
)

SIM_VREF_VOLTS = 4.5

# Square wave produced when a channel mux selects the internal test signal.
TEST_SIGNAL_UV = 1875.0
TEST_SIGNAL_HZ = 1.0

# Artifact burst shapes. A blink is one slow biphasic deflection (raised-cosine
# envelope on a single-cycle lobe); a chew is a short EMG-like burst with a
# 20-35 Hz carrier. Peaks sit well above the 35-65 uV alpha range so the two
# signal families stay visually and numerically distinct.
BLINK_DURATION_S = 0.3
BLINK_PEAK_UV = 150.0
CHEW_DURATION_S = 0.4
CHEW_PEAK_UV = 120.0
CHEW_CARRIER_HZ = 28.0

DEFAULT_NOISE_RMS_UV = 10.0


class ScenarioError(ValueError):
    """Scenario definition violates its invariants."""


class ScenarioFormatError(ScenarioError):
    """Scenario text file could not be parsed."""


class SimulationStateError(RuntimeError):
    """Device asked to do something its mode forbids."""


@dataclass(frozen=True)
class Marker:
    """A labeled time interval: ground truth in scenarios, cue record in sessions."""

    label: str
    t_start_s: float
    t_end_s: float

    def __post_init__(self):
        if not self.t_start_s < self.t_end_s:
            raise ScenarioError(f"marker {self.label!r}: start {self.t_start_s} >= end {self.t_end_s}")


# --- Signal components -----------------------------------------------------


@dataclass(frozen=True)
class Sine:
    freq_hz: float
    amplitude_uv: float
    phase: float = 0.0

    def render(self, t: np.ndarray) -> np.ndarray:
        return self.amplitude_uv * np.sin(2 * np.pi * self.freq_hz * t + self.phase)

    def span(self):
        return None


@dataclass(frozen=True)
class GatedSine:
    """Sine present only inside the given (start, end) intervals."""

    freq_hz: float
    amplitude_uv: float
    gates: tuple[tuple[float, float], ...]
    phase: float = 0.0

    def render(self, t: np.ndarray) -> np.ndarray:
        open_gate = np.zeros(t.shape, dtype=bool)
        for t0, t1 in self.gates:
            open_gate |= (t >= t0) & (t < t1)
        return np.where(open_gate, self.amplitude_uv * np.sin(2 * np.pi * self.freq_hz * t + self.phase), 0.0)

    def span(self):
        if not self.gates:
            return None
        return min(g[0] for g in self.gates), max(g[1] for g in self.gates)


def _normalized_pulse(wave):
    tau = np.linspace(0.0, 1.0, 8192)
    return float(np.max(np.abs(wave(tau))))


def _blink_wave(tau: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2 * np.pi * tau)) * np.sin(2 * np.pi * tau)


def _chew_wave(tau: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2 * np.pi * tau)) * np.sin(2 * np.pi * CHEW_CARRIER_HZ * CHEW_DURATION_S * tau)


_BLINK_NORM = _normalized_pulse(_blink_wave)
_CHEW_NORM = _normalized_pulse(_chew_wave)

BURST_SHAPES = {
    "blink": (_blink_wave, _BLINK_NORM, BLINK_DURATION_S, BLINK_PEAK_UV),
    "chew": (_chew_wave, _CHEW_NORM, CHEW_DURATION_S, CHEW_PEAK_UV),
}


@dataclass(frozen=True)
class BurstTrain:
    """Groups of artifact bursts: group g starts at group_starts[g] and holds
    group_counts[g] bursts spaced spacing_s apart."""

    shape: str
    group_starts: tuple[float, ...]
    group_counts: tuple[int, ...]
    spacing_s: float = 0.8

    def __post_init__(self):
        if self.shape not in BURST_SHAPES:
            raise ScenarioError(f"unknown burst shape {self.shape!r} (have {sorted(BURST_SHAPES)})")
        if len(self.group_starts) != len(self.group_counts):
            raise ScenarioError("group_starts and group_counts must pair up")
        if any(c < 1 for c in self.group_counts):
            raise ScenarioError("burst group counts must be >= 1")

    def burst_starts(self):
        for start, count in zip(self.group_starts, self.group_counts):
            for k in range(count):
                yield start + k * self.spacing_s

    def render(self, t: np.ndarray) -> np.ndarray:
        wave, norm, dur, peak = BURST_SHAPES[self.shape]
        out = np.zeros(t.shape)
        for s in self.burst_starts():
            mask = (t >= s) & (t < s + dur)
            if mask.any():
                out[mask] += peak * wave((t[mask] - s) / dur) / norm
        return out

    def span(self):
        _, _, dur, _ = BURST_SHAPES[self.shape]
        starts = list(self.burst_starts())
        return min(starts), max(starts) + dur


@dataclass(frozen=True)
class WhiteNoise:
    """Gaussian noise, seeded per (scenario seed, channel, component slot)."""

    rms_uv: float

    def span(self):
        return None


@dataclass(frozen=True)
class Mains:
    """Power-line hum."""

    freq_hz: float
    amplitude_uv: float

    def __post_init__(self):
        if self.freq_hz not in (50.0, 60.0, 50, 60):
            raise ScenarioError("mains frequency must be 50 or 60 Hz")

    def render(self, t: np.ndarray) -> np.ndarray:
        return self.amplitude_uv * np.sin(2 * np.pi * self.freq_hz * t)

    def span(self):
        return None


@dataclass(frozen=True)
class Drift:
    """Slow linear baseline drift."""

    slope_uv_per_s: float

    def render(self, t: np.ndarray) -> np.ndarray:
        return self.slope_uv_per_s * t

    def span(self):
        return None


Component = Sine | GatedSine | BurstTrain | WhiteNoise | Mains | Drift

_AMPLITUDE_FIELDS = ("amplitude_uv", "rms_uv")


@dataclass
class SignalScenario:
    """Scripted synthetic ground truth for all 16 channels.

    `channels[k]` is the component list for channel k+1. Rendering is
    deterministic for a fixed seed, including the noise streams.
    """

    name: str
    duration_s: float
    channels: tuple[tuple[Component, ...], ...]
    sps: int = 250
    seed: int = 0
    markers: tuple[Marker, ...] = ()
    _noise: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ScenarioError("duration_s must be positive")
        if self.sps <= 0:
            raise ScenarioError("sps must be positive")
        if len(self.channels) != N_CHANNELS:
            raise ScenarioError(f"need component lists for all {N_CHANNELS} channels")
        for ch, comps in enumerate(self.channels, start=1):
            for comp in comps:
                for attr in _AMPLITUDE_FIELDS:
                    value = getattr(comp, attr, None)
                    if value is not None and value < 0:
                        raise ScenarioError(f"channel {ch}: {attr} must be >= 0")
                span = comp.span()
                if span is not None and (span[0] < 0 or span[1] > self.duration_s):
                    raise ScenarioError(
                        f"channel {ch}: component {type(comp).__name__} spans {span}, "
                        f"outside [0, {self.duration_s}]"
                    )
        for marker in self.markers:
            if marker.t_start_s < 0 or marker.t_end_s > self.duration_s:
                raise ScenarioError(f"marker {marker.label!r} outside the scenario span")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sps))

    def _noise_array(self, channel_index: int, component_index: int, rms: float) -> np.ndarray:
        key = (channel_index, component_index)
        if key not in self._noise:
            rng = np.random.default_rng([self.seed, channel_index, component_index])
            self._noise[key] = rng.normal(0.0, rms, self.n_samples)
        return self._noise[key]

    def render_block(self, start_index: int, n: int) -> np.ndarray:
        """Microvolt matrix (n, 16) for frames start_index..start_index+n-1,
        wrapping modulo the scenario length."""
        idx = (start_index + np.arange(n)) % self.n_samples
        t = idx / self.sps
        out = np.zeros((n, N_CHANNELS))
        for ch in range(N_CHANNELS):
            for ci, comp in enumerate(self.channels[ch]):
                if isinstance(comp, WhiteNoise):
                    out[:, ch] += self._noise_array(ch, ci, comp.rms_uv)[idx]
                else:
                    out[:, ch] += comp.render(t)
        return out

    def sample(self, channel: int, t_s: float) -> float:
        """Microvolts on `channel` (1..16) at time t_s; the synth oracle."""
        if not 1 <= channel <= N_CHANNELS:
            raise ScenarioError(f"channel {channel} out of 1..{N_CHANNELS}")
        if not 0 <= t_s <= self.duration_s:
            raise ScenarioError(f"t={t_s} outside [0, {self.duration_s}]")
        t = np.array([t_s])
        total = 0.0
        k = min(int(round(t_s * self.sps)), self.n_samples - 1)
        for ci, comp in enumerate(self.channels[channel - 1]):
            if isinstance(comp, WhiteNoise):
                total += float(self._noise_array(channel - 1, ci, comp.rms_uv)[k])
            else:
                total += float(comp.render(t)[0])
        return total


def synth_sample(scenario: SignalScenario, channel: int, t_s: float) -> float:
    return scenario.sample(channel, t_s)


# --- Simulated device pair -------------------------------------------------


class DeviceMode(Enum):
    STANDBY = "standby"
    IDLE = "idle"
    CONTINUOUS_READ = "continuous_read"


class SimulatedDevicePair:
    """Command state machine over two lockstep RegisterMaps.

    Commands arrive as encoded bytes on the shared DIN of the chain, so
    writes broadcast to both devices and register reads return device-0
    bytes. Illegal operations are recorded in `violations` (the device
    itself answers with garbage, like hardware would) rather than raised.
    """

    def __init__(self):
        self.registers = (RegisterMap(), RegisterMap())
        self.mode = DeviceMode.IDLE
        self.running = False
        self.sample_index = 0
        self.violations: list[str] = []
        self._gains: np.ndarray | None = None
        self._muxes: list | None = None
        self._block: tuple | None = None  # (scenario, block_start, uv_matrix)

    # -- command path --

    def handle_command(self, data: bytes) -> bytes | None:
        cmd = decode_command(bytes(data))
        op = cmd.opcode
        if self.mode is DeviceMode.STANDBY and op not in (Opcode.WAKEUP, Opcode.RESET):
            self.violations.append(f"{op.name} while in standby")
            return None
        if op is Opcode.WAKEUP:
            self.mode = DeviceMode.IDLE if self.mode is DeviceMode.STANDBY else self.mode
            return None
        if op is Opcode.STANDBY:
            self.mode = DeviceMode.STANDBY
            self.running = False
            return None
        if op is Opcode.RESET:
            for regs in self.registers:
                regs.reset()
            self.mode = DeviceMode.IDLE
            self.running = False
            self.sample_index = 0
            self._invalidate()
            return None
        if op is Opcode.START:
            self.running = True
            return None
        if op is Opcode.STOP:
            self.running = False
            return None
        if op is Opcode.RDATAC:
            self.mode = DeviceMode.CONTINUOUS_READ
            return None
        if op is Opcode.SDATAC:
            if self.mode is DeviceMode.CONTINUOUS_READ:
                self.mode = DeviceMode.IDLE
            return None
        if op is Opcode.RREG:
            if self.mode is DeviceMode.CONTINUOUS_READ:
                self.violations.append("RREG during continuous-read (SDATAC required first)")
                return bytes([0xFF]) * (cmd.count + 1)
            return bytes(self.registers[0].read(cmd.address + i) for i in range(cmd.count + 1))
        if op is Opcode.WREG:
            if self.mode is DeviceMode.CONTINUOUS_READ:
                self.violations.append("WREG during continuous-read (SDATAC required first)")
                return None
            for regs in self.registers:
                for i, value in enumerate(cmd.payload):
                    regs.write(cmd.address + i, value)
            self._invalidate()
            return None
        raise AssertionError(f"unhandled opcode {op}")

    def _invalidate(self):
        self._gains = None
        self._muxes = None

    def _channel_settings(self):
        if self._gains is None:
            gains = np.empty(N_CHANNELS)
            muxes = []
            for k in range(N_CHANNELS):
                regs = self.registers[k // CHANNELS_PER_DEVICE]
                dev_ch = k % CHANNELS_PER_DEVICE + 1
                gains[k] = regs.channel_gain(dev_ch)
                muxes.append(regs.channel_mux(dev_ch))
            self._gains, self._muxes = gains, muxes
        return self._gains, self._muxes

    # -- data path --

    def next_frame(self, scenario: SignalScenario) -> bytes:
        """Clock out one 54-byte frame at t = sample_index / sps."""
        if self.mode is not DeviceMode.CONTINUOUS_READ:
            raise SimulationStateError("no data outside continuous-read mode (send RDATAC)")
        if not self.running:
            raise SimulationStateError("conversions not running (send START)")
        rate = self.registers[0].data_rate_sps
        if rate != scenario.sps:
            raise SimulationStateError(f"CONFIG1 selects {rate} sps but the scenario runs at {scenario.sps}")

        uv = self._scenario_row(scenario).copy()
        gains, muxes = self._channel_settings()
        t = self.sample_index / scenario.sps
        from .protocol import InputMux  # local to avoid a wide import surface

        for k, mux in enumerate(muxes):
            if mux is InputMux.SHORTED:
                uv[k] = 0.0
            elif mux is InputMux.TEST_SIGNAL:
                uv[k] = TEST_SIGNAL_UV if (t * TEST_SIGNAL_HZ) % 1.0 < 0.5 else -TEST_SIGNAL_UV

        raw = np.rint(uv * gains * (SAMPLE_MAX / (SIM_VREF_VOLTS * 1e6))).astype(np.int64)
        np.clip(raw, SAMPLE_MIN, SAMPLE_MAX, out=raw)

        gpio_nibbles = [(regs["GPIO"] >> 4) & 0xF for regs in self.registers]
        frame = DataFrame(
            status=(make_status(gpio=gpio_nibbles[0]), make_status(gpio=gpio_nibbles[1])),
            channels=tuple(int(v) for v in raw),
        )
        self.sample_index += 1
        return encode_frame(frame)

    def _scenario_row(self, scenario: SignalScenario) -> np.ndarray:
        block_len = scenario.sps
        block_start = (self.sample_index // block_len) * block_len
        cached = self._block
        if cached is None or cached[0] is not scenario or cached[1] != block_start:
            self._block = (scenario, block_start, scenario.render_block(block_start, block_len))
        return self._block[2][self.sample_index - block_start]


def handle_command(pair: SimulatedDevicePair, data: bytes) -> bytes | None:
    return pair.handle_command(data)


def next_frame(pair: SimulatedDevicePair, scenario: SignalScenario) -> bytes:
    return pair.next_frame(scenario)


def make_streaming(pair: SimulatedDevicePair, scenario: SignalScenario) -> None:
    """Issue the reset/configure/start/read-continuous sequence for a scenario."""
    pair.handle_command(bytes([Opcode.RESET.value]))
    from .protocol import config1_value

    pair.handle_command(bytes([Opcode.WREG.value | 0x01, 0x00, config1_value(scenario.sps)]))
    pair.handle_command(bytes([Opcode.START.value]))
    pair.handle_command(bytes([Opcode.RDATAC.value]))


# --- Preset catalog --------------------------------------------------------

ALPHA_EPOCH_S = 5.0
ALPHA_FREQ_HZ = 10.0
ALPHA_PEAK_UV = 50.0

_ARTIFACT_LAYOUT = {
    # (group_starts, group_counts) at a 0.8 s burst spacing
    "chew": ((2.0, 7.5, 12.0, 15.5), (4, 3, 2, 1)),
    "blink": ((22.0, 27.5, 32.0, 35.5), (4, 3, 2, 1)),
}
_ARTIFACT_MARKERS = {"chew": (1.0, 17.0), "blink": (21.0, 37.0)}
ARTIFACT_TEST_MIN_S = 37.0

PRESET_NAMES = ("alpha_test", "alpha_control", "artifact_test", "mains_noise")

_PRESET_DEFAULT_DURATION = {
    "alpha_test": 60.0,
    "alpha_control": 60.0,
    "artifact_test": 40.0,
    "mains_noise": 30.0,
}


def _alpha_epochs(duration_s: float):
    """Alternating closed/open 5 s epochs covering duration_s, closed first."""
    markers = []
    t = 0.0
    closed = True
    while t < duration_s - 1e-9:
        end = min(t + ALPHA_EPOCH_S, duration_s)
        markers.append(Marker("eyes_closed" if closed else "eyes_open", t, end))
        t = end
        closed = not closed
    return tuple(markers)


def build_preset(name: str, duration_s: float | None = None, sps: int = 250, seed: int = 0) -> SignalScenario:
    """Construct one named preset scenario."""
    if name not in PRESET_NAMES:
        raise ScenarioError(f"unknown preset {name!r} (have {', '.join(PRESET_NAMES)})")
    if duration_s is None:
        duration_s = _PRESET_DEFAULT_DURATION[name]

    if name in ("alpha_test", "alpha_control"):
        markers = _alpha_epochs(duration_s)
        gates = tuple((m.t_start_s, m.t_end_s) for m in markers if m.label == "eyes_closed")
        channels = []
        for ch in range(N_CHANNELS):
            if name == "alpha_test":
                tone: Component = GatedSine(ALPHA_FREQ_HZ, ALPHA_PEAK_UV, gates, phase=ch * np.pi / 8)
            else:
                # control: the same tone in BOTH conditions, so closed/open symmetry holds
                tone = Sine(ALPHA_FREQ_HZ, ALPHA_PEAK_UV, phase=ch * np.pi / 8)
            channels.append((tone, WhiteNoise(DEFAULT_NOISE_RMS_UV)))
        return SignalScenario(name, duration_s, tuple(channels), sps=sps, seed=seed, markers=markers)

    if name == "artifact_test":
        if duration_s < ARTIFACT_TEST_MIN_S:
            raise ScenarioError(
                f"artifact_test has a fixed {ARTIFACT_TEST_MIN_S:.0f} s event layout; "
                f"duration {duration_s} s would truncate it"
            )
        channels = tuple(
            (
                BurstTrain("chew", *_ARTIFACT_LAYOUT["chew"]),
                BurstTrain("blink", *_ARTIFACT_LAYOUT["blink"]),
                WhiteNoise(DEFAULT_NOISE_RMS_UV),
            )
            for _ in range(N_CHANNELS)
        )
        markers = tuple(Marker(label, *span) for label, span in _ARTIFACT_MARKERS.items())
        return SignalScenario(name, duration_s, channels, sps=sps, seed=seed, markers=markers)

    channels = tuple(
        (Mains(50.0, 20.0), WhiteNoise(DEFAULT_NOISE_RMS_UV)) for _ in range(N_CHANNELS)
    )
    return SignalScenario(name, duration_s, channels, sps=sps, seed=seed)


def scenario_presets(duration_s: float | None = None, sps: int = 250, seed: int = 0) -> dict[str, SignalScenario]:
    """The named preset catalog used by the CLI and the service."""
    return {name: build_preset(name, duration_s, sps, seed) for name in PRESET_NAMES}


# --- Declarative scenario files --------------------------------------------

_COMPONENT_PARSERS = {
    "sine": (Sine, {"freq_hz": float, "amplitude_uv": float, "phase": float}),
    "gated_sine": (GatedSine, {"freq_hz": float, "amplitude_uv": float, "gates": "intervals", "phase": float}),
    "burst_train": (
        BurstTrain,
        {"shape": str, "starts": "floats", "counts": "ints", "spacing_s": float},
    ),
    "white_noise": (WhiteNoise, {"rms_uv": float}),
    "mains": (Mains, {"freq_hz": float, "amplitude_uv": float}),
    "drift": (Drift, {"slope_uv_per_s": float}),
}

_BURST_KEY_MAP = {"starts": "group_starts", "counts": "group_counts"}


def _parse_value(kind, raw: str, line_no: int):
    try:
        if kind == "intervals":
            return tuple(
                (float(a), float(b))
                for a, b in (pair.split(":") for pair in raw.split(","))
            )
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        if kind == "ints":
            return tuple(int(v) for v in raw.split(","))
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"line {line_no}: bad value {raw!r} ({exc})") from None


def _parse_channel_list(spec: str, line_no: int) -> list[int]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    for ch in out:
        if not 1 <= ch <= N_CHANNELS:
            raise ScenarioFormatError(f"line {line_no}: channel {ch} out of 1..{N_CHANNELS}")
    return out


def parse_scenario(text: str, name: str = "scenario") -> SignalScenario:
    """Parse the key-value scenario format (see README for the grammar)."""
    header: dict[str, str] = {}
    channels: list[list[Component]] = [[] for _ in range(N_CHANNELS)]
    markers: list[Marker] = []
    section: list[int] | str | None = None

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            inner = line[1:-1].strip()
            if inner == "markers":
                section = "markers"
            elif inner.startswith("channels"):
                section = _parse_channel_list(inner[len("channels"):], line_no)
            else:
                raise ScenarioFormatError(f"line {line_no}: unknown section {inner!r}")
            continue
        if section is None:
            if "=" not in line:
                raise ScenarioFormatError(f"line {line_no}: expected key = value in the header")
            key, value = (part.strip() for part in line.split("=", 1))
            header[key] = value
            continue
        if section == "markers":
            parts = line.split()
            if len(parts) != 3:
                raise ScenarioFormatError(f"line {line_no}: markers need 'label t_start t_end'")
            markers.append(Marker(parts[0], float(parts[1]), float(parts[2])))
            continue
        parts = line.split()
        kind = parts[0]
        if kind not in _COMPONENT_PARSERS:
            raise ScenarioFormatError(f"line {line_no}: unknown component {kind!r}")
        cls, schema = _COMPONENT_PARSERS[kind]
        kwargs = {}
        for item in parts[1:]:
            if "=" not in item:
                raise ScenarioFormatError(f"line {line_no}: expected key=value, got {item!r}")
            key, value = item.split("=", 1)
            if key not in schema:
                raise ScenarioFormatError(f"line {line_no}: {kind} has no parameter {key!r}")
            kwargs[_BURST_KEY_MAP.get(key, key)] = _parse_value(schema[key], value, line_no)
        try:
            comp = cls(**kwargs)
        except (TypeError, ScenarioError) as exc:
            raise ScenarioFormatError(f"line {line_no}: {exc}") from None
        for ch in section:
            channels[ch - 1].append(comp)

    try:
        duration = float(header["duration_s"])
    except KeyError:
        raise ScenarioFormatError("header must set duration_s") from None
    return SignalScenario(
        name=header.get("name", name),
        duration_s=duration,
        channels=tuple(tuple(c) for c in channels),
        sps=int(header.get("sps", 250)),
        seed=int(header.get("seed", 0)),
        markers=tuple(markers),
    )


def load_scenario(path: str | Path) -> SignalScenario:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)
