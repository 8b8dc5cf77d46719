"""Mono 16 kHz PCM16 WAV files: the audio interchange format of the CLI."""

from __future__ import annotations

import wave

import numpy as np

from .tensor import round_half_away

__all__ = [
    "SAMPLE_RATE",
    "float_to_pcm16",
    "pcm16_to_float",
    "write_wav",
    "read_wav",
    "read_wav_pcm",
]

SAMPLE_RATE = 16_000
_PCM_SCALE = 32767.0


def float_to_pcm16(x: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1], scale by 32767, round half away from zero."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return round_half_away(x * _PCM_SCALE).astype("<i2")


def pcm16_to_float(pcm: np.ndarray) -> np.ndarray:
    return np.asarray(pcm, dtype=np.float64) / _PCM_SCALE


def write_wav(path, samples: np.ndarray, rate: int = SAMPLE_RATE):
    pcm = float_to_pcm16(samples)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(pcm.tobytes())


def read_wav_pcm(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError("expected mono 16-bit PCM")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    return np.frombuffer(raw, dtype="<i2"), rate


def read_wav(path) -> tuple[np.ndarray, int]:
    pcm, rate = read_wav_pcm(path)
    return pcm16_to_float(pcm), rate
