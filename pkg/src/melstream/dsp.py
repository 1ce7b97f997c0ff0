"""STFT analysis/synthesis, Mel filterbanks, power-ratio masks.

Spectrograms are complex64 arrays shaped ``[T, F, M]`` (frames, bins,
channels). Mel quantities are float32 ``[T, F']``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import StftConfig
from .kernels import DTYPE, ConfigError, ShapeError

POWER_FLOOR = 1e-10
LOG_FLOOR = 1e-10
NORM_DECAY = 0.999
NORM_EPS = 1e-8


def hann_window(n):
    """Periodic Hann window (constant overlap-add at hop n/4)."""
    k = np.arange(n)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)).astype(DTYPE)


def _as_multichannel(wave):
    wave = np.asarray(wave, dtype=DTYPE)
    if wave.ndim == 1:
        wave = wave[:, None]
    if wave.ndim != 2:
        raise ShapeError(f"waveform must be [samples] or [samples, channels], got {wave.shape}")
    return wave


def frame_signal(wave, cfg=StftConfig()):
    """Slice ``[N, M]`` samples into ``[T, fft_size, M]`` frames, no padding.

    Frame ``t`` covers samples ``t*hop .. t*hop + fft_size - 1`` so it only
    needs audio that has already arrived.
    """
    wave = _as_multichannel(wave)
    if wave.shape[0] == 0:
        raise ValueError("empty waveform")
    T = cfg.n_frames(wave.shape[0])
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(T)[:, None]
    return wave[idx]


def stft(wave, cfg=StftConfig()):
    """Complex STFT ``[T, F, M]`` with a periodic Hann window."""
    frames = frame_signal(wave, cfg)
    win = hann_window(cfg.fft_size)[None, :, None]
    return np.fft.rfft(frames * win, axis=1).astype(np.complex64)


def stft_frame(frame, cfg=StftConfig()):
    """STFT of a single ``[fft_size, M]`` frame, returns ``[F, M]``."""
    return stft(frame, cfg)[0]


def istft(spec, cfg=StftConfig()):
    """Weighted overlap-add inverse of :func:`stft` for one channel.

    Accepts ``[T, F]`` or ``[T, F, 1]``. Samples whose summed squared window
    is (near) zero come out as zero.
    """
    spec = np.asarray(spec)
    if spec.ndim == 3:
        if spec.shape[2] != 1:
            raise ShapeError("istft expects a single channel")
        spec = spec[:, :, 0]
    if spec.ndim != 2 or spec.shape[1] != cfg.n_freqs:
        raise ShapeError(f"spectrogram {spec.shape} does not have {cfg.n_freqs} bins")
    T = spec.shape[0]
    n = cfg.fft_size
    length = (T - 1) * cfg.hop + n if T else 0
    win = hann_window(n).astype(np.float64)
    frames = np.fft.irfft(spec.astype(np.complex128), n=n, axis=1) * win[None, :]
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(T):
        sl = slice(t * cfg.hop, t * cfg.hop + n)
        out[sl] += frames[t]
        norm[sl] += win * win
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out.astype(DTYPE)


# --------------------------------------------------------------------------
# normalisation


@dataclass
class NormState:
    """Bias-corrected exponential running mean of the reference magnitude."""

    mean: np.float32 = DTYPE(0.0)
    weight: np.float32 = DTYPE(0.0)
    frames: int = 0

    def copy(self):
        return NormState(self.mean, self.weight, self.frames)


def normalize(spec, state=None, ref=4, decay=NORM_DECAY, eps=NORM_EPS):
    """Divide every channel by the running mean magnitude of channel ``ref``.

    Frame ``t`` uses statistics of frames ``<= t`` only. Returns
    ``(normalised_spec, new_state, scales)`` with ``scales[t]`` the divisor
    applied to frame ``t``.
    """
    spec = np.asarray(spec)
    if spec.ndim != 3:
        raise ShapeError("normalize expects [T, F, M]")
    if not 0 <= ref < spec.shape[2]:
        raise ConfigError(f"reference channel {ref} outside 0..{spec.shape[2] - 1}")
    state = NormState() if state is None else state.copy()
    level = np.abs(spec[:, :, ref]).mean(axis=1, dtype=DTYPE)
    d = DTYPE(decay)
    g = DTYPE(1.0) - d
    floor = DTYPE(eps)
    scales = np.empty(spec.shape[0], dtype=DTYPE)
    mean, weight = DTYPE(state.mean), DTYPE(state.weight)
    for t in range(spec.shape[0]):
        mean = d * mean + g * level[t]
        weight = d * weight + g
        scales[t] = max(mean / weight, floor)
    state.mean, state.weight = mean, weight
    state.frames += spec.shape[0]
    out = (spec / scales[:, None, None]).astype(np.complex64)
    return out, state, scales


# --------------------------------------------------------------------------
# Mel filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # [F', F]
    band_edges: np.ndarray  # [F' + 2] Hz
    scale: str = "htk-mel"

    @property
    def n_bands(self):
        return self.weights.shape[0]

    @property
    def n_freqs(self):
        return self.weights.shape[1]

    def support(self):
        """Per band, the ``(first, last + 1)`` FFT-bin range with nonzero weight."""
        spans = []
        for row in self.weights:
            nz = np.flatnonzero(row)
            spans.append((int(nz[0]), int(nz[-1]) + 1) if nz.size else (0, 0))
        return spans


def build_mel_filterbank(cfg=StftConfig(), n_mels=80, fmin=0.0, fmax=8000.0):
    """HTK-spaced unit-peak triangular filters over the rFFT bins."""
    if n_mels < 2:
        raise ConfigError("n_mels must be >= 2")
    if fmax > cfg.sample_rate / 2 or fmin < 0 or fmin >= fmax:
        raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(cfg.n_freqs) * cfg.sample_rate / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) == 0.0)
    if empty.size:
        raise ConfigError(
            f"n_mels={n_mels} too large for {cfg.n_freqs} bins: band {int(empty[0])} covers no bin"
        )
    return MelFilterbank(weights.astype(DTYPE), edges)


def identity_filterbank(n_freqs):
    """Pass-through "filterbank" used by the linear-frequency configuration."""
    return MelFilterbank(np.eye(n_freqs, dtype=DTYPE), np.arange(n_freqs + 2, dtype=np.float64), "linear")


# --------------------------------------------------------------------------
# Mel power, masks


def power(spec):
    return (spec.real * spec.real + spec.imag * spec.imag).astype(DTYPE)


def mel_power(spec, fb, ch=0):
    """``|X[:, :, ch]|^2 @ fb.T`` -> ``[T, F']``."""
    spec = np.asarray(spec)
    if spec.ndim == 2:
        spec = spec[:, :, None]
    if not 0 <= ch < spec.shape[2]:
        raise ConfigError(f"channel {ch} does not exist")
    if spec.shape[1] != fb.n_freqs:
        raise ShapeError(f"spectrogram has {spec.shape[1]} bins, filterbank expects {fb.n_freqs}")
    return power(spec[:, :, ch]) @ fb.weights.T


def mel_prm(clean, noisy):
    """Rectified power-ratio mask ``min(sqrt(S / X), 1)`` per bin.

    Where ``X == 0`` the mask is 1 if ``S > 0`` and 0 if ``S == 0``.
    """
    clean = np.asarray(clean, dtype=DTYPE)
    noisy = np.asarray(noisy, dtype=DTYPE)
    if clean.shape != noisy.shape:
        raise ShapeError(f"clean {clean.shape} and noisy {noisy.shape} differ")
    mask = np.ones_like(clean)
    pos = noisy > 0
    mask[pos] = np.minimum(np.sqrt(clean[pos] / noisy[pos]), DTYPE(1.0))
    mask[~pos & (clean <= 0)] = 0.0
    return mask


def apply_mask(noisy_mel, mask, floor=LOG_FLOOR):
    """Enhanced log power ``log(max(mask^2 * X, floor))``."""
    noisy_mel = np.asarray(noisy_mel, dtype=DTYPE)
    mask = np.asarray(mask, dtype=DTYPE)
    if noisy_mel.shape != mask.shape:
        raise ShapeError(f"noisy {noisy_mel.shape} and mask {mask.shape} differ")
    return np.log(np.maximum(mask * mask * noisy_mel, DTYPE(floor)))


def mask_mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def lift_mask(mask, fb):
    """Spread a ``[T, F']`` band mask onto ``[T, F]`` FFT bins.

    Uses the column-normalised transpose of the filterbank; bins no filter
    covers take the nearest covered bin's value. Result is clipped to [0, 1].
    """
    mask = np.asarray(mask, dtype=np.float64)
    w = fb.weights.astype(np.float64)
    colsum = w.sum(axis=0)
    covered = np.flatnonzero(colsum > 0)
    lifted = np.zeros((mask.shape[0], fb.n_freqs))
    lifted[:, covered] = (mask @ w[:, covered]) / colsum[covered]
    nearest = covered[np.clip(np.searchsorted(covered, np.arange(fb.n_freqs)), 0, covered.size - 1)]
    below = np.arange(fb.n_freqs) < covered[0]
    nearest[below] = covered[0]
    uncovered = colsum <= 0
    lifted[:, uncovered] = lifted[:, nearest[uncovered]]
    return np.clip(lifted, 0.0, 1.0).astype(DTYPE)


def pseudo_inverse_reconstruct(noisy_spec, mask, fb, cfg=StftConfig(), ch=0):
    """Crude waveform from a band mask: lift, scale the noisy STFT, overlap-add.

    This is a low-fidelity fallback for listening checks, not a vocoder.
    """
    noisy_spec = np.asarray(noisy_spec)
    if noisy_spec.ndim == 3:
        noisy_spec = noisy_spec[:, :, ch]
    gain = lift_mask(mask, fb)
    return istft(noisy_spec * gain, cfg)
