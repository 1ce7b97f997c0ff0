"""WAV reading and writing on top of :mod:`scipy.io.wavfile`.

Audio is exchanged as float32 ``[samples, channels]`` in [-1, 1).
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.io import wavfile


class WavError(ValueError):
    """Unreadable or unsupported WAV data."""


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def read_wav(path, expected_rate=None):
    """Return ``(audio[samples, channels] float32, sample_rate)``."""
    try:
        with warnings.catch_warnings():
            # scipy warns about unknown chunks (LIST, etc.) it skips anyway
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise WavError(f"{path}: {exc}") from exc
    if data.dtype == np.uint8:
        audio = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        audio = data.astype(np.float32) / np.float32(_INT_SCALE[data.dtype])
    elif data.dtype in (np.float32, np.float64):
        audio = data.astype(np.float32)
    else:
        raise WavError(f"{path}: unsupported sample format {data.dtype}")
    if audio.ndim == 1:
        audio = audio[:, None]
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if audio.shape[0] == 0:
        raise WavError(f"{path}: no samples")
    return audio, int(rate)


def write_wav(path, audio, rate, pcm16=False):
    """Write float audio as 32-bit float (default) or clipped 16-bit PCM."""
    audio = np.asarray(audio, dtype=np.float32)
    if audio.ndim == 2 and audio.shape[1] == 1:
        audio = audio[:, 0]
    if pcm16:
        audio = np.clip(np.round(audio * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, int(rate), audio)
