"""Mono WAV reading and writing (16-bit PCM in, 32-bit float out by default)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

PCM16_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono file as float32 in [-1, 1). PCM16 samples map to ``k / 32768``."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return (data.astype(np.float32) / np.float32(PCM16_SCALE)), rate
    if data.dtype == np.float32:
        return data, rate
    if data.dtype == np.float64:
        return data.astype(np.float32), rate
    raise WavFormatError(f"{path}: unsupported sample type {data.dtype}")


def to_pcm16(x: np.ndarray) -> np.ndarray:
    """Round to the nearest 16-bit code, clipping out-of-range samples (no dither)."""
    return np.clip(np.rint(np.asarray(x, np.float64) * PCM16_SCALE), -32768, 32767).astype(np.int16)


def write_wav(path: str | Path, x: np.ndarray, rate: int = 16000, pcm16: bool = False) -> None:
    x = np.asarray(x)
    if x.ndim != 1:
        raise WavFormatError(f"expected a 1-D signal, got shape {x.shape}")
    data = to_pcm16(x) if pcm16 else x.astype(np.float32)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), rate, data)
