"""RIFF/WAVE reader and writer, restricted to mono 16-bit PCM at 16 kHz."""

from __future__ import annotations

import struct

import numpy as np

SAMPLE_RATE = 16000
_SCALE = 32768.0


class WavFormatError(ValueError):
    """Raised when a file is not the supported WAV flavor."""


def read_wav(path: str) -> np.ndarray:
    """Read a mono 16 kHz 16-bit PCM WAV into float64 samples in [-1, 1)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4 : pos + 8])
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format != 1:
        raise WavFormatError(f"{path}: not PCM (format tag {audio_format})")
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if bits != 16:
        raise WavFormatError(f"{path}: expected 16-bit samples, got {bits}")
    ints = np.frombuffer(data, dtype="<i2")
    return ints.astype(np.float64) / _SCALE


def write_wav(path: str, samples: np.ndarray) -> None:
    """Write float samples (clipped to [-1, 1)) as mono 16 kHz 16-bit PCM."""
    x = np.asarray(samples, dtype=np.float64)
    ints = np.clip(np.round(x * _SCALE), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16)
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)))
        f.write(b"WAVE")
        f.write(b"fmt ")
        f.write(struct.pack("<I", len(fmt)))
        f.write(fmt)
        f.write(b"data")
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
