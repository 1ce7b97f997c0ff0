"""STFT-to-Mel compression: multichannel STFT ``[T, F, M]`` -> ``[T, F', D]``.

The proposed variant runs a magnitude branch and a phase branch in parallel:
linear block, ``Q`` frequency-convolution blocks with gated cross-branch
exchange after each block, then a handcrafted (magnitude) or learnable
(phase) filterbank. Both branches are stacked and smoothed by a causal
time convolution. ``joint-*`` variants feed stacked real/imaginary parts
through a single branch.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .dsp import MelFilterbank, build_mel_filterbank
from .kernels import CAUSAL, DTYPE, SAME, ConfigError, ShapeError, scoped
from .weights import ParamSpec

# --------------------------------------------------------------------------
# parameters


def _lin_specs(prefix, n_in, dim):
    return [
        ParamSpec(f"{prefix}.W", (dim, n_in), fan_in=n_in),
        ParamSpec(f"{prefix}.b", (dim,), fan_in=n_in),
        ParamSpec(f"{prefix}.ln.g", (dim,), "ones"),
        ParamSpec(f"{prefix}.ln.b", (dim,), "zeros"),
    ]


def _fcb_specs(prefix, dim, k):
    return [
        ParamSpec(f"{prefix}.K", (dim, dim, k), fan_in=dim * k),
        ParamSpec(f"{prefix}.b", (dim,), fan_in=dim * k),
        ParamSpec(f"{prefix}.ln.g", (dim,), "ones"),
        ParamSpec(f"{prefix}.ln.b", (dim,), "zeros"),
    ]


def filterbank_for(cfg):
    return build_mel_filterbank(cfg.stft, cfg.n_mels, cfg.fmin, cfg.fmax)


def group_sizes(fb):
    """FFT bins per band for the grouped (TrainMel) compression."""
    return [hi - lo for lo, hi in fb.support()]


def param_specs(cfg):
    s = cfg.s2m
    D, M, F, Fm = s.dim, cfg.n_channels, cfg.stft.n_freqs, cfg.n_mels
    specs = []
    if s.separate:
        specs += _lin_specs("s2m.mag.lin", M, D)
        specs += _lin_specs("s2m.pha.lin", 2 * M, D)
        for i in range(s.blocks):
            specs += _fcb_specs(f"s2m.mag.fcb.{i}", D, s.f_kernel)
            specs += _fcb_specs(f"s2m.pha.fcb.{i}", D, s.f_kernel)
            directions = ("p2m", "m2p") if s.comm == "bidirectional" else ("p2m",)
            for d in directions:
                specs += [
                    ParamSpec(f"s2m.comm.{i}.{d}.W", (D, D), fan_in=D),
                    ParamSpec(f"s2m.comm.{i}.{d}.b", (D,), fan_in=D),
                ]
        specs += [
            ParamSpec("s2m.pha.fb.W", (Fm, F), fan_in=F),
            ParamSpec("s2m.pha.fb.b", (Fm,), fan_in=F),
        ]
        tsb_in = 2 * D
    else:
        specs += _lin_specs("s2m.joint.lin", 2 * M, D)
        if s.has_fcb:
            for i in range(s.blocks):
                specs += _fcb_specs(f"s2m.joint.fcb.{i}", D, s.f_kernel)
        if s.variant == "joint-trainmel":
            sizes = group_sizes(filterbank_for(cfg))
            specs += [
                ParamSpec("s2m.trainmel.W", (sum(sizes),), fan_in=max(sizes)),
                ParamSpec("s2m.trainmel.b", (Fm,), fan_in=max(sizes)),
            ]
        tsb_in = D
    if s.has_tsb:
        specs += [
            ParamSpec("s2m.tsb.K", (D, tsb_in, s.t_kernel), fan_in=tsb_in * s.t_kernel),
            ParamSpec("s2m.tsb.b", (D,), fan_in=tsb_in * s.t_kernel),
        ]
    return specs


# --------------------------------------------------------------------------
# building blocks


def linear_block(x, W, b, gamma, beta, use_relu, counter=None):
    """Per-(t, f) projection to ``D`` features, optional ReLU, LayerNorm."""
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear block expects {W.shape[1]} input features, got {x.shape[-1]}")
    y = K.linear(x, W, b, counter=counter)
    if use_relu:
        y = K.relu(y, counter=counter)
    return K.layer_norm(y, gamma, beta, counter=counter)


def fconv_block(x, kernel, bias, gamma, beta, use_relu, counter=None):
    """Convolution along frequency (axis -2 of ``[T, F, D]``), each frame on its own."""
    y = K.conv1d(x, kernel, bias, mode=SAME, counter=counter)
    if use_relu:
        y = K.relu(y, counter=counter)
    return K.layer_norm(y, gamma, beta, counter=counter)


def info_comm(e_target, e_source, W, b, counter=None):
    """Gate ``e_target`` elementwise by ``tanh(linear(e_source))``."""
    if e_target.shape != e_source.shape:
        raise ShapeError(f"branch shapes differ: {e_target.shape} vs {e_source.shape}")
    gate = K.tanh(K.linear(e_source, W, b, counter=counter), counter=counter)
    if counter is not None:
        counter.add(adds=gate.size)
    return e_target * gate


def apply_handcrafted_fb(x, fb, counter=None):
    """``out[t, f', d] = sum_f fb[f', f] * x[t, f, d]``."""
    w = fb.weights if isinstance(fb, MelFilterbank) else np.asarray(fb, dtype=DTYPE)
    if x.shape[-2] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[-2]} bins, filterbank expects {w.shape[1]}")
    y = np.matmul(w, x)
    if counter is not None:
        T = int(np.prod(x.shape[:-2], dtype=np.int64))
        counter.add(macs=T * w.shape[0] * w.shape[1] * x.shape[-1])
    return y


def apply_learnable_fb(x, W, b, counter=None):
    y = apply_handcrafted_fb(x, W, counter=counter)
    y += np.asarray(b, dtype=DTYPE)[:, None]
    if counter is not None:
        counter.add(adds=y.size)
    return y


def apply_grouped_fb(x, W, b, spans, counter=None):
    """One small fully connected map per band over that band's own bins.

    ``W`` is the concatenation of the per-band weight vectors, ``spans`` the
    ``(lo, hi)`` bin range of each band.
    """
    T, F, D = x.shape
    total = sum(hi - lo for lo, hi in spans)
    if total != W.shape[0]:
        raise ShapeError(f"grouped weights hold {W.shape[0]} values, spans need {total}")
    y = np.empty((T, len(spans), D), dtype=DTYPE)
    pos = 0
    for j, (lo, hi) in enumerate(spans):
        n = hi - lo
        y[:, j, :] = np.einsum("f,tfd->td", W[pos : pos + n], x[:, lo:hi, :]) + b[j]
        pos += n
    if counter is not None:
        counter.add(macs=T * total * D, adds=T * len(spans) * D)
    return y


def tsb(x, kernel, bias, history=None, counter=None):
    """Causal smoothing over time of ``[T, F', C]`` -> ``[T, F', D]``.

    ``history`` holds the previous ``k-1`` input frames per band
    (``[F', k-1, C]``); returns ``(y, new_history)``.
    """
    k = kernel.shape[2]
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))  # [F', T, C]
    if history is None:
        history = np.zeros((xt.shape[0], k - 1, xt.shape[2]), dtype=DTYPE)
    y = K.conv1d(xt, kernel, bias, mode=CAUSAL, history=history, counter=counter)
    new_history = np.concatenate([history, xt], axis=1)[:, xt.shape[1] :, :]
    return y.transpose(1, 0, 2), np.ascontiguousarray(new_history)


# --------------------------------------------------------------------------
# module


def branch_inputs(spec, separate):
    """Input features per (t, f).

    Separate: ``(|X|, [cos angle X, sin angle X])`` with ``M`` and ``2M``
    features. Joint: ``[Re X, Im X]`` with ``2M`` features.
    """
    spec = np.asarray(spec)
    if separate:
        mag = np.abs(spec).astype(DTYPE)
        ang = np.angle(spec)
        pha = np.concatenate([np.cos(ang), np.sin(ang)], axis=-1).astype(DTYPE)
        return mag, pha
    return np.concatenate([spec.real, spec.imag], axis=-1).astype(DTYPE)


class Stft2Mel:
    """Compression module bound to a config and a weight dictionary."""

    def __init__(self, cfg, weights, fb=None):
        if cfg.frontend != "mel":
            raise ConfigError("the linear-frequency configuration has no compression module")
        self.cfg = cfg
        self.s = cfg.s2m
        self.fb = fb if fb is not None else filterbank_for(cfg)
        self.w = {k: np.asarray(v, dtype=DTYPE) for k, v in weights.items() if k.startswith("s2m.")}
        missing = [s.name for s in param_specs(cfg) if s.name not in self.w]
        if missing:
            raise ConfigError(f"missing compression weights: {missing[:3]}")
        for name in self.w:
            if name.endswith(".K"):
                self.w[name] = K.ConvKernel(self.w[name])
        self.spans = self.fb.support()

    @property
    def history_shape(self):
        c_in = 2 * self.s.dim if self.s.separate else self.s.dim
        return (self.cfg.n_mels, self.s.t_kernel - 1, c_in)

    def initial_history(self):
        if not self.s.has_tsb:
            return None
        return np.zeros(self.history_shape, dtype=DTYPE)

    def _lin(self, prefix, x, relu, counter):
        w = self.w
        with scoped(counter, prefix):
            return linear_block(
                x, w[f"{prefix}.W"], w[f"{prefix}.b"], w[f"{prefix}.ln.g"], w[f"{prefix}.ln.b"], relu, counter
            )

    def _fcb(self, prefix, x, relu, counter):
        w = self.w
        with scoped(counter, prefix):
            return fconv_block(
                x, w[f"{prefix}.K"], w[f"{prefix}.b"], w[f"{prefix}.ln.g"], w[f"{prefix}.ln.b"], relu, counter
            )

    def branches(self, spec, counter=None):
        """Pre-stack band embeddings ``(mag, pha)`` (separate) or ``(joint, None)``."""
        s, w = self.s, self.w
        if s.separate:
            mag_in, pha_in = branch_inputs(spec, True)
            em = self._lin("s2m.mag.lin", mag_in, True, counter)
            ep = self._lin("s2m.pha.lin", pha_in, False, counter)
            for i in range(s.blocks):
                em = self._fcb(f"s2m.mag.fcb.{i}", em, True, counter)
                ep = self._fcb(f"s2m.pha.fcb.{i}", ep, False, counter)
                with scoped(counter, f"s2m.comm.{i}.p2m"):
                    new_m = info_comm(em, ep, w[f"s2m.comm.{i}.p2m.W"], w[f"s2m.comm.{i}.p2m.b"], counter)
                if s.comm == "bidirectional":
                    with scoped(counter, f"s2m.comm.{i}.m2p"):
                        ep = info_comm(ep, em, w[f"s2m.comm.{i}.m2p.W"], w[f"s2m.comm.{i}.m2p.b"], counter)
                em = new_m
            with scoped(counter, "s2m.mag.fb"):
                bm = apply_handcrafted_fb(em, self.fb, counter)
            with scoped(counter, "s2m.pha.fb"):
                bp = apply_learnable_fb(ep, w["s2m.pha.fb.W"], w["s2m.pha.fb.b"], counter)
            return bm, bp

        e = self._lin("s2m.joint.lin", branch_inputs(spec, False), True, counter)
        if s.variant == "joint-trainmel":
            with scoped(counter, "s2m.trainmel"):
                return apply_grouped_fb(e, w["s2m.trainmel.W"], w["s2m.trainmel.b"], self.spans, counter), None
        if s.has_fcb:
            for i in range(s.blocks):
                e = self._fcb(f"s2m.joint.fcb.{i}", e, True, counter)
        with scoped(counter, "s2m.joint.fb"):
            return apply_handcrafted_fb(e, self.fb, counter), None

    def compress(self, spec, history=None, counter=None):
        """Normalised STFT ``[T, F, M]`` -> ``([T, F', D], new_tsb_history)``."""
        spec = np.asarray(spec)
        cfg = self.cfg
        if spec.ndim != 3 or spec.shape[1:] != (cfg.stft.n_freqs, cfg.n_channels):
            raise ShapeError(
                f"expected [T, {cfg.stft.n_freqs}, {cfg.n_channels}] spectrogram, got {spec.shape}"
            )
        a, b = self.branches(spec, counter)
        stacked = a if b is None else np.concatenate([a, b], axis=-1)
        if not self.s.has_tsb:
            return stacked, None
        if history is None:
            history = self.initial_history()
        with scoped(counter, "s2m.tsb"):
            return tsb(stacked, self.w["s2m.tsb.K"], self.w["s2m.tsb.b"], history, counter)
