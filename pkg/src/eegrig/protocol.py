"""ADS1299 command set, register map, daisy-chain data frames, and raw/microvolt conversion.

Pure, stateless codec shared by the simulated device pair, the acquisition
loop, and any future hardware backend. Two 8-channel converters are modeled
as a daisy chain: one data-ready shifts out a single 54-byte frame
(2 x [3 status bytes + 8 x 3 sample bytes]).

Everything here is byte-exact wire contract; no I/O.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# Frame geometry: two daisy-chained devices, 27 bytes each.
DEVICE_COUNT = 2
CHANNELS_PER_DEVICE = 8
N_CHANNELS = DEVICE_COUNT * CHANNELS_PER_DEVICE
DEVICE_FRAME_BYTES = 27
FRAME_BYTES = DEVICE_COUNT * DEVICE_FRAME_BYTES

# 24-bit two's-complement sample range.
SAMPLE_MIN = -(2**23)
SAMPLE_MAX = 2**23 - 1

# Status words carry 0xC in the top nibble; a mismatch means the SPI
# shift-out lost alignment.
SYNC_NIBBLE = 0xC

# ID register value for the simulated converter revision family.
DEVICE_ID = 0x3E

REGISTER_COUNT = 24
MAX_REGISTER_ADDRESS = 0x17

GAINS = (1, 2, 4, 6, 8, 12, 24)
DATA_RATES = (250, 500, 1000, 2000, 4000, 8000, 16000)


class ProtocolError(Exception):
    """Base for codec-level failures."""


class EncodingError(ProtocolError):
    """Command or frame violates the wire contract and cannot be encoded."""


class FramingError(ProtocolError):
    """Byte sequence has the wrong length for a frame."""


class DesyncError(FramingError):
    """Status sync nibble missing; carries the offending byte offset."""

    def __init__(self, offset: int, message: str | None = None):
        self.offset = offset
        super().__init__(message or f"status sync nibble != 0xC at byte offset {offset}")


class SaturationError(ProtocolError):
    """Microvolt value exceeds full scale; carries the clamped raw count."""

    def __init__(self, uv: float, clamped_raw: int):
        self.uv = uv
        self.clamped_raw = clamped_raw
        super().__init__(f"{uv} uV exceeds full scale; clamps to raw count {clamped_raw}")


class Opcode(Enum):
    WAKEUP = 0x02
    STANDBY = 0x04
    RESET = 0x06
    START = 0x08
    STOP = 0x0A
    RDATAC = 0x10
    SDATAC = 0x11
    RREG = 0x20  # OR'ed with the start address on the wire
    WREG = 0x40  # OR'ed with the start address on the wire


_SIMPLE_OPCODES = frozenset(
    {Opcode.WAKEUP, Opcode.STANDBY, Opcode.RESET, Opcode.START, Opcode.STOP, Opcode.RDATAC, Opcode.SDATAC}
)


@dataclass(frozen=True)
class Command:
    """One converter command.

    `address` and `count` apply to RREG/WREG only; `count` is the register
    count minus one, per the wire format. WREG carries `count + 1` payload
    bytes.
    """

    opcode: Opcode
    address: int = 0
    count: int = 0
    payload: bytes = b""

    def __post_init__(self):
        if self.opcode in _SIMPLE_OPCODES:
            if self.address or self.count or self.payload:
                raise EncodingError(f"{self.opcode.name} takes no address, count, or payload")
            return
        if not 0 <= self.address <= MAX_REGISTER_ADDRESS:
            raise EncodingError(f"register address 0x{self.address:02X} out of range")
        if self.count < 0 or self.address + self.count > MAX_REGISTER_ADDRESS:
            raise EncodingError(
                f"address 0x{self.address:02X} + count {self.count} crosses the register file end"
            )
        if self.opcode is Opcode.WREG:
            if len(self.payload) != self.count + 1:
                raise EncodingError(
                    f"WREG payload must be count+1 = {self.count + 1} bytes, got {len(self.payload)}"
                )
            if any(b > 0xFF or b < 0 for b in self.payload):
                raise EncodingError("WREG payload bytes must be 0..255")
        elif self.payload:
            raise EncodingError("RREG takes no payload")


def encode_command(cmd: Command) -> bytes:
    """Encode a command to its SPI byte sequence."""
    if cmd.opcode in _SIMPLE_OPCODES:
        return bytes([cmd.opcode.value])
    first = cmd.opcode.value | cmd.address
    if cmd.opcode is Opcode.RREG:
        return bytes([first, cmd.count])
    return bytes([first, cmd.count]) + bytes(cmd.payload)


def decode_command(data: bytes) -> Command:
    """Inverse of :func:`encode_command`; raises EncodingError on malformed bytes."""
    if not data:
        raise EncodingError("empty command")
    first = data[0]
    for opcode in _SIMPLE_OPCODES:
        if first == opcode.value:
            if len(data) != 1:
                raise EncodingError(f"{opcode.name} is a single byte, got {len(data)}")
            return Command(opcode)
    kind = first & 0xE0
    address = first & 0x1F
    if kind == Opcode.RREG.value:
        if len(data) != 2:
            raise EncodingError("RREG is exactly 2 bytes")
        return Command(Opcode.RREG, address=address, count=data[1])
    if kind == Opcode.WREG.value:
        if len(data) < 2:
            raise EncodingError("WREG needs an address byte and a count byte")
        return Command(Opcode.WREG, address=address, count=data[1], payload=bytes(data[2:]))
    raise EncodingError(f"unknown opcode byte 0x{first:02X}")


# --- Register map ---------------------------------------------------------

REGISTER_NAMES = (
    "ID",
    "CONFIG1",
    "CONFIG2",
    "CONFIG3",
    "LOFF",
    "CH1SET",
    "CH2SET",
    "CH3SET",
    "CH4SET",
    "CH5SET",
    "CH6SET",
    "CH7SET",
    "CH8SET",
    "BIAS_SENSP",
    "BIAS_SENSN",
    "LOFF_SENSP",
    "LOFF_SENSN",
    "LOFF_FLIP",
    "LOFF_STATP",
    "LOFF_STATN",
    "GPIO",
    "MISC1",
    "MISC2",
    "CONFIG4",
)

REGISTER_ADDRESSES = {name: addr for addr, name in enumerate(REGISTER_NAMES)}

# Reset values. CONFIG1 low bits 110 select 250 sps; CHnSET 0x60 is gain 24
# with the input mux on the normal electrode path (the stack's documented
# power-on default; hardware resets the mux to shorted instead).
REGISTER_DEFAULTS = (
    DEVICE_ID,  # ID
    0x96,  # CONFIG1
    0xC0,  # CONFIG2
    0x60,  # CONFIG3
    0x00,  # LOFF
    0x60, 0x60, 0x60, 0x60, 0x60, 0x60, 0x60, 0x60,  # CH1SET..CH8SET
    0x00,  # BIAS_SENSP
    0x00,  # BIAS_SENSN
    0x00,  # LOFF_SENSP
    0x00,  # LOFF_SENSN
    0x00,  # LOFF_FLIP
    0x00,  # LOFF_STATP (read-only)
    0x00,  # LOFF_STATN (read-only)
    0x0F,  # GPIO (all pins inputs, data 0)
    0x00,  # MISC1
    0x00,  # MISC2
    0x00,  # CONFIG4
)

READ_ONLY_ADDRESSES = frozenset(
    {REGISTER_ADDRESSES["ID"], REGISTER_ADDRESSES["LOFF_STATP"], REGISTER_ADDRESSES["LOFF_STATN"]}
)

# CONFIG1 DR bits: 16 kSPS halves per step down to 250.
_RATE_BY_CODE = {code: 16000 >> code for code in range(7)}
_CODE_BY_RATE = {rate: code for code, rate in _RATE_BY_CODE.items()}

# CHnSET gain bits [6:4].
_GAIN_BY_CODE = {0b000: 1, 0b001: 2, 0b010: 4, 0b011: 6, 0b100: 8, 0b101: 12, 0b110: 24}
_CODE_BY_GAIN = {gain: code for code, gain in _GAIN_BY_CODE.items()}


class InputMux(Enum):
    NORMAL = "normal"
    SHORTED = "shorted"
    TEST_SIGNAL = "test_signal"


_MUX_BY_CODE = {0b000: InputMux.NORMAL, 0b001: InputMux.SHORTED, 0b101: InputMux.TEST_SIGNAL}
_CODE_BY_MUX = {mux: code for code, mux in _MUX_BY_CODE.items()}


def chnset_value(gain: int, mux: InputMux | str = InputMux.NORMAL) -> int:
    """Compose a CHnSET register byte from a gain and input-mux selection."""
    if gain not in _CODE_BY_GAIN:
        raise ValueError(f"gain {gain} not in {GAINS}")
    mux = InputMux(mux)
    return (_CODE_BY_GAIN[gain] << 4) | _CODE_BY_MUX[mux]


def config1_value(sps: int) -> int:
    """Compose a CONFIG1 register byte selecting the given output data rate."""
    if sps not in _CODE_BY_RATE:
        raise ValueError(f"data rate {sps} not in {DATA_RATES}")
    return 0x90 | _CODE_BY_RATE[sps]


class RegisterMap:
    """24-register state of one converter, with decoded accessors.

    Writes to read-only registers (ID and the lead-off status pair) are
    ignored, mirroring hardware.
    """

    def __init__(self, values=None):
        if values is None:
            values = REGISTER_DEFAULTS
        values = tuple(int(v) for v in values)
        if len(values) != REGISTER_COUNT:
            raise ValueError(f"register map needs {REGISTER_COUNT} values, got {len(values)}")
        if any(not 0 <= v <= 0xFF for v in values):
            raise ValueError("register values must be bytes")
        self._values = list(values)
        self._values[REGISTER_ADDRESSES["ID"]] = DEVICE_ID

    def read(self, address: int) -> int:
        return self._values[self._check(address)]

    def write(self, address: int, value: int) -> None:
        address = self._check(address)
        if not 0 <= value <= 0xFF:
            raise ValueError(f"register value 0x{value:X} is not a byte")
        if address in READ_ONLY_ADDRESSES:
            return
        self._values[address] = value

    def _check(self, address: int) -> int:
        if not 0 <= address <= MAX_REGISTER_ADDRESS:
            raise ValueError(f"register address 0x{address:02X} out of range")
        return address

    def reset(self) -> None:
        self._values = list(REGISTER_DEFAULTS)

    def __getitem__(self, name: str) -> int:
        return self._values[REGISTER_ADDRESSES[name]]

    def __setitem__(self, name: str, value: int) -> None:
        self.write(REGISTER_ADDRESSES[name], value)

    def dump(self) -> bytes:
        return bytes(self._values)

    def __eq__(self, other):
        return isinstance(other, RegisterMap) and self._values == other._values

    def __repr__(self):
        regs = ", ".join(f"{n}=0x{v:02X}" for n, v in zip(REGISTER_NAMES, self._values))
        return f"RegisterMap({regs})"

    @property
    def data_rate_sps(self) -> int:
        code = self["CONFIG1"] & 0x07
        if code not in _RATE_BY_CODE:
            raise ValueError(f"CONFIG1 rate bits 0b{code:03b} are reserved")
        return _RATE_BY_CODE[code]

    def channel_gain(self, channel: int) -> int:
        """Gain of device channel 1..8."""
        code = (self._chnset(channel) >> 4) & 0x07
        if code not in _GAIN_BY_CODE:
            raise ValueError(f"CH{channel}SET gain bits 0b{code:03b} are reserved")
        return _GAIN_BY_CODE[code]

    def channel_mux(self, channel: int) -> InputMux:
        """Input mux selection of device channel 1..8."""
        code = self._chnset(channel) & 0x07
        if code not in _MUX_BY_CODE:
            raise ValueError(f"CH{channel}SET mux bits 0b{code:03b} are not supported")
        return _MUX_BY_CODE[code]

    def _chnset(self, channel: int) -> int:
        if not 1 <= channel <= CHANNELS_PER_DEVICE:
            raise ValueError(f"device channel {channel} out of 1..{CHANNELS_PER_DEVICE}")
        return self[f"CH{channel}SET"]


# --- Data frames ----------------------------------------------------------


def make_status(loff_p: int = 0, loff_n: int = 0, gpio: int = 0) -> int:
    """Build a 24-bit status word: 0xC sync nibble, lead-off P/N bytes, GPIO nibble."""
    if not (0 <= loff_p <= 0xFF and 0 <= loff_n <= 0xFF and 0 <= gpio <= 0xF):
        raise EncodingError("status fields out of range")
    return (SYNC_NIBBLE << 20) | (loff_p << 12) | (loff_n << 4) | gpio


def split_status(status: int) -> tuple[int, int, int]:
    """Decompose a status word into (loff_p, loff_n, gpio)."""
    return (status >> 12) & 0xFF, (status >> 4) & 0xFF, status & 0xF


@dataclass(frozen=True)
class DataFrame:
    """One conversion instant from the daisy-chained pair.

    `status` holds the two devices' 24-bit status words; `channels` holds 16
    signed samples ordered device-0 ch1..ch8 then device-1 ch1..ch8.
    """

    status: tuple[int, int]
    channels: tuple[int, ...]

    def __post_init__(self):
        if len(self.status) != DEVICE_COUNT:
            raise EncodingError(f"need {DEVICE_COUNT} status words")
        for word in self.status:
            if not 0 <= word < (1 << 24):
                raise EncodingError(f"status word 0x{word:X} is not 24-bit")
            if (word >> 20) != SYNC_NIBBLE:
                raise EncodingError(f"status word 0x{word:06X} lacks the 0xC sync nibble")
        if len(self.channels) != N_CHANNELS:
            raise EncodingError(f"need {N_CHANNELS} channel samples")
        for sample in self.channels:
            if not SAMPLE_MIN <= sample <= SAMPLE_MAX:
                raise EncodingError(f"sample {sample} outside signed 24-bit range")


def encode_frame(frame: DataFrame) -> bytes:
    """Serialize a frame to its 54-byte daisy-chain shift-out."""
    out = bytearray()
    for dev in range(DEVICE_COUNT):
        word = frame.status[dev]
        out += word.to_bytes(3, "big")
        for ch in range(CHANNELS_PER_DEVICE):
            sample = frame.channels[dev * CHANNELS_PER_DEVICE + ch]
            out += (sample & 0xFFFFFF).to_bytes(3, "big")
    return bytes(out)


def decode_frame(data: bytes) -> DataFrame:
    """Parse a 54-byte shift-out; exact inverse of :func:`encode_frame`.

    Raises FramingError on wrong length and DesyncError (with the byte
    offset) when a status sync nibble is missing.
    """
    if len(data) != FRAME_BYTES:
        raise FramingError(f"frame must be {FRAME_BYTES} bytes, got {len(data)}")
    status = []
    channels = []
    for dev in range(DEVICE_COUNT):
        base = dev * DEVICE_FRAME_BYTES
        if (data[base] >> 4) != SYNC_NIBBLE:
            raise DesyncError(base)
        status.append(int.from_bytes(data[base : base + 3], "big"))
        for ch in range(CHANNELS_PER_DEVICE):
            off = base + 3 + 3 * ch
            raw = int.from_bytes(data[off : off + 3], "big")
            if raw >= 1 << 23:
                raw -= 1 << 24
            channels.append(raw)
    return DataFrame(status=(status[0], status[1]), channels=tuple(channels))


# --- Raw count <-> microvolt conversion -----------------------------------


@dataclass(frozen=True)
class ConversionParams:
    """Front-end scaling: reference voltage and programmable gain.

    Full-scale positive code maps exactly to +vref/gain, i.e. one LSB is
    vref / (gain * (2^23 - 1)) volts.
    """

    vref_volts: float = 4.5
    gain: int = 24

    def __post_init__(self):
        if not self.vref_volts > 0:
            raise ValueError("vref_volts must be positive")
        if self.gain not in GAINS:
            raise ValueError(f"gain {self.gain} not in {GAINS}")

    @property
    def lsb_uv(self) -> float:
        """Microvolts per raw count."""
        return self.vref_volts / (self.gain * SAMPLE_MAX) * 1e6

    @property
    def full_scale_uv(self) -> float:
        """Microvolts at the full-scale positive code."""
        return self.vref_volts / self.gain * 1e6


def raw_to_microvolts(raw, params: ConversionParams = ConversionParams()):
    """Convert signed 24-bit counts to microvolts. Accepts scalars or arrays."""
    return raw * (params.vref_volts * 1e6 / (params.gain * SAMPLE_MAX))


def microvolts_to_raw(uv, params: ConversionParams = ConversionParams(), *, clamp: bool = False):
    """Nearest-integer inverse of :func:`raw_to_microvolts`.

    Values beyond full scale raise SaturationError carrying the clamped
    count, or clip silently when `clamp` is set (the converter's own
    behavior). Accepts scalars or arrays; arrays come back as int64.
    """
    scale = params.gain * SAMPLE_MAX / (params.vref_volts * 1e6)
    if isinstance(uv, np.ndarray):
        raw = np.rint(uv * scale).astype(np.int64)
        if clamp:
            return np.clip(raw, SAMPLE_MIN, SAMPLE_MAX)
        bad = (raw < SAMPLE_MIN) | (raw > SAMPLE_MAX)
        if bad.any():
            worst = uv.flat[int(np.argmax(np.abs(np.asarray(uv))))]
            raise SaturationError(float(worst), int(np.clip(raw.flat[int(np.argmax(np.abs(raw)))], SAMPLE_MIN, SAMPLE_MAX)))
        return raw
    raw = int(np.rint(uv * scale))
    if raw < SAMPLE_MIN or raw > SAMPLE_MAX:
        clamped = min(max(raw, SAMPLE_MIN), SAMPLE_MAX)
        if clamp:
            return clamped
        raise SaturationError(float(uv), clamped)
    return raw
