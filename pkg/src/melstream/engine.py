"""Frame-synchronous streaming and whole-utterance (offline) enhancement.

Both paths run the same per-block code: the offline path hands it all
frames at once with fresh state, the streaming path one frame at a time
with carried state. Output frame ``t`` depends only on samples
``0 .. t*hop + fft_size - 1``; the first frame appears once the first full
analysis window has been delivered.
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import dsp
from .backbone import Backbone, BackboneState
from .config import PipelineConfig
from .dsp import NormState
from .kernels import DTYPE, ConfigError, ShapeError
from .stft2mel import Stft2Mel, branch_inputs, filterbank_for
from .weights import check


@dataclass
class StreamState:
    """Everything one stream needs between calls; its size never grows."""

    buffer: np.ndarray  # [fft_size, M] most recent samples
    filled: int
    norm: NormState
    tsb: np.ndarray | None  # [F', k-1, C] past compression frames
    backbone: BackboneState
    frames: int = 0

    @property
    def nbytes(self):
        n = self.buffer.nbytes + self.backbone.nbytes + 2 * np.dtype(DTYPE).itemsize
        if self.tsb is not None:
            n += self.tsb.nbytes
        return n


@dataclass
class EnhanceResult:
    logmel: np.ndarray  # [T, F']
    mask: np.ndarray  # [T, F']
    wave: np.ndarray | None = None


class Engine:
    """Pipeline bound to a configuration and validated weights.

    ``counter`` (an :class:`~melstream.kernels.OpCounter`) receives the
    instrumented operation counts of every forward call. With
    ``profile=True`` wall time per stage is accumulated in ``stage_seconds``.
    """

    def __init__(self, cfg: PipelineConfig, weights, counter=None, profile=False):
        check(weights, cfg)
        self.cfg = cfg
        self.counter = counter
        self.profile = profile
        self.stage_seconds = defaultdict(float)
        if cfg.frontend == "mel":
            self.fb = filterbank_for(cfg)
            self.s2m = Stft2Mel(cfg, weights, self.fb)
        else:
            self.fb = dsp.identity_filterbank(cfg.stft.n_freqs)
            self.s2m = None
        self.backbone = Backbone(cfg, weights)

    # ------------------------------------------------------------------

    def _tick(self, stage, t0):
        if self.profile:
            now = time.perf_counter()
            self.stage_seconds[stage] += now - t0
            return now
        return t0

    def _run(self, spec, state):
        """Raw STFT ``[T, F, M]`` -> (logmel, mask); advances ``state`` in place."""
        cfg = self.cfg
        ref = cfg.ref_channel
        t0 = time.perf_counter() if self.profile else 0.0
        normed, state.norm, _ = dsp.normalize(spec, state.norm, ref)
        sup = np.log(dsp.mel_power(normed, self.fb, ref) + DTYPE(dsp.POWER_FLOOR))
        t0 = self._tick("frontend", t0)
        if self.s2m is not None:
            e, state.tsb = self.s2m.compress(normed, state.tsb, self.counter)
        else:
            e = branch_inputs(normed, separate=False)
        t0 = self._tick("compress", t0)
        mask, state.backbone = self.backbone.forward(e, sup, state.backbone, self.counter)
        t0 = self._tick("backbone", t0)
        logmel = dsp.apply_mask(dsp.mel_power(spec, self.fb, ref), mask)
        self._tick("frontend", t0)
        state.frames += spec.shape[0]
        return logmel, mask

    def _check_wave(self, wave):
        wave = np.asarray(wave, dtype=DTYPE)
        if wave.ndim == 1:
            wave = wave[:, None]
        if wave.ndim != 2 or wave.shape[1] != self.cfg.n_channels:
            raise ShapeError(
                f"expected [samples, {self.cfg.n_channels}] audio, got shape {wave.shape}"
            )
        return wave

    # ------------------------------------------------------------------
    # streaming

    def open_stream(self):
        cfg = self.cfg
        if cfg.stft.fft_size % cfg.stft.hop:
            raise ConfigError("streaming requires fft_size to be a multiple of hop")
        return StreamState(
            buffer=np.zeros((cfg.stft.fft_size, cfg.n_channels), DTYPE),
            filled=0,
            norm=NormState(),
            tsb=None if self.s2m is None else self.s2m.initial_history(),
            backbone=self.backbone.initial_state(),
        )

    def reset(self, state):
        fresh = self.open_stream()
        state.__dict__.update(fresh.__dict__)
        return state

    def push_block(self, state, samples):
        """Feed exactly ``hop`` samples per channel.

        Returns ``(logmel_frame, mask_frame)`` (each ``[F']``), or ``None``
        while the first analysis window is still filling.
        """
        hop = self.cfg.stft.hop
        samples = self._check_wave(samples)
        if samples.shape[0] != hop:
            raise ShapeError(f"push_block takes exactly {hop} samples per channel, got {samples.shape[0]}")
        buf = state.buffer
        buf[:-hop] = buf[hop:]
        buf[-hop:] = samples
        state.filled = min(state.filled + hop, buf.shape[0])
        if state.filled < buf.shape[0]:
            return None
        t0 = time.perf_counter() if self.profile else 0.0
        spec = dsp.stft(buf, self.cfg.stft)
        self._tick("frontend", t0)
        logmel, mask = self._run(spec, state)
        return logmel[0], mask[0]

    def push(self, state, samples):
        """Feed any multiple of ``hop`` samples; returns stacked ``(logmel, mask)``."""
        samples = self._check_wave(samples)
        hop = self.cfg.stft.hop
        if samples.shape[0] % hop:
            raise ShapeError(f"sample count {samples.shape[0]} is not a multiple of hop={hop}")
        out = [self.push_block(state, samples[i : i + hop]) for i in range(0, samples.shape[0], hop)]
        out = [o for o in out if o is not None]
        F = self.cfg.n_bands
        if not out:
            return np.zeros((0, F), DTYPE), np.zeros((0, F), DTYPE)
        return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])

    # ------------------------------------------------------------------
    # offline

    def offline(self, wave, reconstruct=False):
        wave = self._check_wave(wave)
        t0 = time.perf_counter() if self.profile else 0.0
        spec = dsp.stft(wave, self.cfg.stft)
        self._tick("frontend", t0)
        state = self.open_stream()
        logmel, mask = self._run(spec, state)
        out = EnhanceResult(logmel, mask)
        if reconstruct:
            out.wave = dsp.pseudo_inverse_reconstruct(spec, mask, self.fb, self.cfg.stft, self.cfg.ref_channel)
        return out

    def streaming(self, wave):
        """Run the streaming path over a whole waveform (tail shorter than hop is dropped)."""
        wave = self._check_wave(wave)
        hop = self.cfg.stft.hop
        n = (wave.shape[0] // hop) * hop
        state = self.open_stream()
        logmel, mask = self.push(state, wave[:n])
        return EnhanceResult(logmel, mask)


def open_stream(cfg, weights):
    engine = Engine(cfg, weights)
    return engine, engine.open_stream()


def offline_enhance(wave, cfg, weights, reconstruct=False):
    return Engine(cfg, weights).offline(wave, reconstruct=reconstruct)
