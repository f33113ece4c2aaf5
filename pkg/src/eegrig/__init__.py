"""eegrig: a 16-channel EEG acquisition stack that runs entirely in software.

Register-accurate simulation of a daisy-chained ADS1299 pair, the SPI-level
codec it speaks, a real-time acquisition loop with drop accounting, streaming
DSP (band-pass cascades, band power, artifact/alpha detectors), cued session
recording and replay, and a local control/streaming service for an operator
console.
"""

__version__ = "0.1.0"
