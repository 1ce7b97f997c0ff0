"""Four-module recurrent backbone operating on ``[T, bands, features]``.

1. full-band spatial: BiLSTM across bands within each frame
2. narrow-band spatial: forward LSTM across time, one per band (shared weights)
3. sub-band spectral: as 2, plus the log reference power of ``n1``/``n2``
   neighbouring bands
4. full-band spectral: BiLSTM across bands, plus the log reference power of
   the ``context`` most recent frames

followed by a linear layer and a sigmoid producing the band mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .kernels import DTYPE, ConfigError, LSTMParams, ShapeError, scoped
from .weights import ParamSpec

FREQ_MODULES = (1, 4)


def module_inputs(cfg):
    """Input width of each module (including supplementary features)."""
    b = cfg.backbone
    return (
        cfg.feature_dim,
        b.dims[0],
        b.dims[1] + b.n1 + b.n2 + 1,
        b.dims[2] + b.context,
    )


def param_specs(cfg):
    b = cfg.backbone
    specs = []
    for m, n_in in enumerate(module_inputs(cfg), start=1):
        if m in b.identity:
            continue
        h = b.hidden[m - 1]
        lead = (2,) if m in FREQ_MODULES else ()
        ndir = 2 if m in FREQ_MODULES else 1
        specs += [
            ParamSpec(f"bb.m{m}.lstm.Wx", lead + (4 * h, n_in), fan_in=h),
            ParamSpec(f"bb.m{m}.lstm.Wh", lead + (4 * h, h), fan_in=h),
            ParamSpec(f"bb.m{m}.lstm.b", lead + (4 * h,), fan_in=h),
            ParamSpec(f"bb.m{m}.lin.W", (b.dims[m - 1], ndir * h), fan_in=ndir * h),
            ParamSpec(f"bb.m{m}.lin.b", (b.dims[m - 1],), fan_in=ndir * h),
        ]
    specs += [
        ParamSpec("bb.out.W", (1, b.dims[3]), fan_in=b.dims[3]),
        ParamSpec("bb.out.b", (1,), fan_in=b.dims[3]),
    ]
    return specs


# --------------------------------------------------------------------------
# feature helpers


def band_neighbourhood(aux, n1, n2):
    """``[T, B, a]`` -> ``[T, B, (n1 + n2 + 1) * a]`` with edge-clamped band indices."""
    B = aux.shape[1]
    idx = np.clip(np.arange(B)[:, None] + np.arange(-n1, n2 + 1)[None, :], 0, B - 1)
    nb = aux[:, idx, :]  # [T, B, n, a]
    return nb.reshape(aux.shape[0], B, -1)


def frame_context(aux, history):
    """Stack the ``C`` most recent frames of ``aux`` (``[T, B]``).

    ``history`` is ``[C-1, B]``. Returns ``([T, B, C], new_history)``; the
    last column is the current frame.
    """
    C = history.shape[0] + 1
    full = np.concatenate([history, aux], axis=0)
    T = aux.shape[0]
    ctx = np.stack([full[j : j + T] for j in range(C)], axis=-1)
    return ctx, full[full.shape[0] - (C - 1) :]


# --------------------------------------------------------------------------
# modules


def module_freq(x, params, W, b, aux=None, counter=None):
    """BiLSTM across bands within each frame, then a linear projection.

    ``x`` is ``[T, B, d]``; ``params`` is a (forward, backward) pair.
    """
    if aux is not None:
        x = np.concatenate([x, aux], axis=-1)
    with scoped(counter, "lstm"):
        y = K.lstm_seq(x.transpose(1, 0, 2), params, "bidirectional", counter=counter)
    with scoped(counter, "lin"):
        return K.linear(y.transpose(1, 0, 2), W, b, counter=counter)


def module_time(x, params, W, b, state=None, aux=None, n1=0, n2=0, counter=None):
    """Forward LSTM across time for every band, weights shared between bands.

    ``aux`` (``[T, B, a]``) is expanded over the ``n1``/``n2`` neighbouring
    bands and appended to ``x``. Returns ``(y, (h, c))``.
    """
    if aux is not None:
        x = np.concatenate([x, band_neighbourhood(aux, n1, n2)], axis=-1)
    with scoped(counter, "lstm"):
        y, state = K.lstm_seq(x, params, "forward", state=state, counter=counter)
    with scoped(counter, "lin"):
        return K.linear(y, W, b, counter=counter), state


@dataclass
class BackboneState:
    """Recurrent memory: (h, c) per band for modules 2 and 3, context frames for 4."""

    m2: tuple
    m3: tuple
    context: np.ndarray

    def copy(self):
        dup = lambda s: None if s is None else (s[0].copy(), s[1].copy())  # noqa: E731
        return BackboneState(dup(self.m2), dup(self.m3), self.context.copy())

    @property
    def nbytes(self):
        arrays = [self.context]
        for s in (self.m2, self.m3):
            if s is not None:
                arrays += list(s)
        return sum(a.nbytes for a in arrays)


class Backbone:
    def __init__(self, cfg, weights):
        self.cfg = cfg
        self.b = cfg.backbone
        self.bands = cfg.n_bands
        w = {k: np.asarray(v, dtype=DTYPE) for k, v in weights.items() if k.startswith("bb.")}
        for spec in param_specs(cfg):
            if spec.name not in w:
                raise ConfigError(f"missing backbone weight {spec.name}")
            if w[spec.name].shape != spec.shape:
                raise ShapeError(f"{spec.name}: expected {spec.shape}, got {w[spec.name].shape}")
        self.w = w
        self.lstm = {}
        for m in range(1, 5):
            if m in self.b.identity:
                continue
            p = f"bb.m{m}.lstm"
            if m in FREQ_MODULES:
                self.lstm[m] = tuple(
                    LSTMParams(w[f"{p}.Wx"][d], w[f"{p}.Wh"][d], w[f"{p}.b"][d]) for d in range(2)
                )
            else:
                self.lstm[m] = LSTMParams(w[f"{p}.Wx"], w[f"{p}.Wh"], w[f"{p}.b"])

    def initial_state(self):
        def zeros(m):
            if m in self.b.identity:
                return None
            shape = (self.bands, self.b.hidden[m - 1])
            return np.zeros(shape, DTYPE), np.zeros(shape, DTYPE)

        return BackboneState(zeros(2), zeros(3), np.zeros((self.b.context - 1, self.bands), DTYPE))

    def forward(self, e, sup, state=None, counter=None):
        """Embeddings ``[T, B, d]`` and log reference power ``[T, B]`` -> ``(mask, state)``."""
        e = np.asarray(e, dtype=DTYPE)
        sup = np.asarray(sup, dtype=DTYPE)
        if e.ndim != 3 or e.shape[1] != self.bands or e.shape[2] != self.cfg.feature_dim:
            raise ShapeError(f"expected [T, {self.bands}, {self.cfg.feature_dim}] input, got {e.shape}")
        if sup.shape != e.shape[:2]:
            raise ShapeError(f"supplementary power {sup.shape} != {e.shape[:2]}")
        # modules return fresh state arrays, so the caller's state is never mutated
        state = self.initial_state() if state is None else BackboneState(state.m2, state.m3, state.context)
        w, ident = self.w, self.b.identity

        x = e
        if 1 not in ident:
            with scoped(counter, "bb.m1"):
                x = module_freq(x, self.lstm[1], w["bb.m1.lin.W"], w["bb.m1.lin.b"], counter=counter)
        if 2 not in ident:
            with scoped(counter, "bb.m2"):
                x, state.m2 = module_time(
                    x, self.lstm[2], w["bb.m2.lin.W"], w["bb.m2.lin.b"], state.m2, counter=counter
                )
        if 3 not in ident:
            with scoped(counter, "bb.m3"):
                x, state.m3 = module_time(
                    x,
                    self.lstm[3],
                    w["bb.m3.lin.W"],
                    w["bb.m3.lin.b"],
                    state.m3,
                    aux=sup[:, :, None],
                    n1=self.b.n1,
                    n2=self.b.n2,
                    counter=counter,
                )
        ctx, state.context = frame_context(sup, state.context)
        if 4 not in ident:
            with scoped(counter, "bb.m4"):
                x = module_freq(x, self.lstm[4], w["bb.m4.lin.W"], w["bb.m4.lin.b"], aux=ctx, counter=counter)
        with scoped(counter, "bb.out"):
            logits = K.linear(x, w["bb.out.W"], w["bb.out.b"], counter=counter)[..., 0]
            mask = K.sigmoid(logits, counter=counter)
        return mask, state
