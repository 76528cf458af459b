"""Mono 16 kHz PCM16 WAV reading/writing.

Scaling is 1/32768 on read and 32768 with clamping on write, which makes a
read -> write round trip of any file we produced bit-identical.
"""

from __future__ import annotations

import wave as _wave
from pathlib import Path

import numpy as np

from .config import SAMPLE_RATE
from .errors import InputError

F32 = np.float32


def read_wav(path) -> np.ndarray:
    path = Path(path)
    try:
        with _wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            n = w.getnframes()
            raw = w.readframes(n)
    except (OSError, _wave.Error) as exc:
        raise InputError(f"cannot read WAV {path}: {exc}") from exc
    if channels != 1:
        raise InputError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise InputError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (resample first)")
    ints = np.frombuffer(raw, dtype="<i2")
    return (ints.astype(F32) / F32(32768.0)).astype(F32)


def write_wav(path, samples):
    samples = np.asarray(samples, dtype=F32).reshape(-1)
    ints = np.clip(np.rint(samples * 32768.0), -32768, 32767).astype("<i2")
    with _wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(ints.tobytes())
