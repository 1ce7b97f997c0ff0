"""Dense float32 kernels with operation counting.

Every kernel takes an optional :class:`OpCounter`. Counts are derived from
shapes only, so two inputs of the same shape always produce the same totals.

Conventions (shared with :mod:`melstream.ledger`):

* 1 MAC = one multiply plus one add.
* ``adds`` counts elementwise arithmetic that is not part of a MAC
  (bias adds, normalisation arithmetic, gating products).
* ``nonlins`` counts transcendental or comparison ops (exp, tanh, sqrt, max).
"""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
import math
from dataclasses import dataclass

import numba
import numpy as np

DTYPE = np.float32
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value violates a kernel or module contract."""


class OpCounter:
    """Accumulates MAC / add / nonlinearity counts, optionally per layer.

    Counts are attributed to the innermost active :meth:`scope`; nested scope
    names are joined with ``"."``.
    """

    def __init__(self):
        self.reset()

    def reset(self):
        self.macs = 0
        self.adds = 0
        self.nonlins = 0
        self.by_layer = defaultdict(lambda: [0, 0, 0])
        self._stack = []

    @contextmanager
    def scope(self, name):
        self._stack.append(name)
        try:
            yield self
        finally:
            self._stack.pop()

    @property
    def current(self):
        return ".".join(self._stack)

    def add(self, macs=0, adds=0, nonlins=0):
        if macs < 0 or adds < 0 or nonlins < 0:
            raise ValueError("operation counts must be non-negative")
        self.macs += int(macs)
        self.adds += int(adds)
        self.nonlins += int(nonlins)
        row = self.by_layer[self.current]
        row[0] += int(macs)
        row[1] += int(adds)
        row[2] += int(nonlins)


@contextmanager
def scoped(counter, name):
    """``counter.scope(name)`` that tolerates ``counter is None``."""
    if counter is None:
        yield None
    else:
        with counter.scope(name):
            yield counter


def _count(counter, macs=0, adds=0, nonlins=0):
    if counter is not None:
        counter.add(macs, adds, nonlins)


def _rows(x):
    return math.prod(x.shape[:-1])


# --------------------------------------------------------------------------
# elementwise


def relu(x, counter=None):
    _count(counter, nonlins=x.size)
    return np.maximum(x, DTYPE(0))


def tanh(x, counter=None):
    _count(counter, nonlins=x.size)
    return np.tanh(x)


def sigmoid(x, counter=None):
    """Logistic function, evaluated as ``0.5 + 0.5 * tanh(x / 2)``."""
    _count(counter, nonlins=x.size)
    x = np.asarray(x, dtype=DTYPE)
    y = np.tanh(x * DTYPE(0.5))
    y *= DTYPE(0.5)
    y += DTYPE(0.5)
    return y


# --------------------------------------------------------------------------
# dense layers


def linear(x, W, b=None, counter=None):
    """``y = x @ W.T + b`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=DTYPE)
    W = np.asarray(W, dtype=DTYPE)
    if W.ndim != 2:
        raise ShapeError(f"weight must be 2-D, got shape {W.shape}")
    out_dim, in_dim = W.shape
    if x.shape[-1] != in_dim:
        raise ShapeError(f"input last dim {x.shape[-1]} != weight in dim {in_dim}")
    y = x @ W.T
    rows = _rows(x)
    _count(counter, macs=rows * in_dim * out_dim)
    if b is not None:
        b = np.asarray(b, dtype=DTYPE)
        if b.shape != (out_dim,):
            raise ShapeError(f"bias shape {b.shape} != ({out_dim},)")
        y += b
        _count(counter, adds=rows * out_dim)
    return y


# fastmath only lets the row reductions vectorise; each row still goes
# through identical code whatever the batch size.
@numba.njit(cache=True, fastmath=True)
def _layer_norm_rows(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    for r in range(n):
        row = x[r]
        mean = np.float32(0.0)
        for j in range(d):
            mean += row[j]
        mean /= d
        var = np.float32(0.0)
        for j in range(d):
            dv = row[j] - mean
            var += dv * dv
        var /= d
        inv = np.float32(1.0) / np.sqrt(var + eps)
        for j in range(d):
            y[r, j] = (row[j] - mean) * inv * gamma[j] + beta[j]
    return y


def layer_norm(x, gamma, beta, eps=LN_EPS, counter=None):
    """Normalise each row of the last axis to zero mean / unit variance, then scale and shift."""
    x = np.asarray(x, dtype=DTYPE)
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over an empty axis")
    if np.shape(gamma) != (d,) or np.shape(beta) != (d,):
        raise ShapeError(f"gamma/beta must have shape ({d},)")
    rows = _rows(x)
    y = _layer_norm_rows(
        np.ascontiguousarray(x.reshape(rows, d)),
        np.asarray(gamma, dtype=DTYPE),
        np.asarray(beta, dtype=DTYPE),
        DTYPE(eps),
    )
    # mean, centre, square+sum (MAC), divide, affine (MAC)
    _count(counter, macs=2 * rows * d, adds=3 * rows * d, nonlins=rows)
    return y.reshape(x.shape)


# --------------------------------------------------------------------------
# convolution

SAME = "same-centered"
CAUSAL = "causal-past"


class ConvKernel:
    """A ``[out, in, k]`` kernel with its two matrix layouts prepared once.

    ``conv1d`` accepts either a plain array or one of these; model code packs
    its kernels at construction so per-frame calls skip the relayout.
    """

    def __init__(self, kernel):
        kernel = np.asarray(kernel, dtype=DTYPE)
        if kernel.ndim != 3:
            raise ShapeError(f"kernel must be [out, in, k], got {kernel.shape}")
        out_ch, in_ch, k = kernel.shape
        if k < 1:
            raise ConfigError("kernel size must be >= 1")
        self.weight = kernel
        self.shape = kernel.shape
        # [(k, in), out], tap-major to match the sliding window layout
        self.window = np.ascontiguousarray(kernel.transpose(2, 1, 0).reshape(k * in_ch, out_ch))
        # [in, (k, out)], all taps side by side for the shift-and-add form
        self.taps = np.ascontiguousarray(kernel.transpose(1, 2, 0).reshape(in_ch, k * out_ch))


@numba.njit(cache=True, fastmath=True)
def _shift_add(z, bias, y):
    # y[l] = bias + sum_j z[l + j - left, j], terms outside [0, L) dropped
    L, k, out = z.shape
    left = (k - 1) // 2
    for l in range(L):
        for o in range(out):
            y[l, o] = bias[o] + z[l, left, o]
        for j in range(k):
            src = l + j - left
            if j != left and 0 <= src < L:
                for o in range(out):
                    y[l, o] += z[src, j, o]


def conv1d(x, kernel, bias=None, mode=SAME, history=None, counter=None):
    """1-D cross-correlation along axis ``-2`` of ``x`` (shape ``[..., L, in]``).

    ``same-centered`` pads ``(k-1)//2`` before and the rest after.
    ``causal-past`` pads exactly ``k-1`` frames before position 0, taken from
    ``history`` (shape ``[..., k-1, in]``) when given, zeros otherwise. The
    causal path is evaluated one output position at a time so each output
    row goes through an identically shaped product regardless of ``L``.
    """
    x = np.asarray(x, dtype=DTYPE)
    if not isinstance(kernel, ConvKernel):
        kernel = ConvKernel(kernel)
    out_ch, in_ch, k = kernel.shape
    if x.ndim < 2 or x.shape[-1] != in_ch:
        raise ShapeError(f"input {x.shape} does not end in [L, {in_ch}]")
    lead = x.shape[:-2]
    L = x.shape[-2]
    n_lead = math.prod(lead)
    if bias is not None:
        bias = np.asarray(bias, dtype=DTYPE)
        if bias.shape != (out_ch,):
            raise ShapeError(f"bias shape {bias.shape} != ({out_ch},)")
    bias_done = False

    if mode == SAME:
        if history is not None:
            raise ConfigError("history is only meaningful for causal-past mode")
        # one product against all taps, then shifted sums; one leading row at
        # a time keeps z cache-sized and the product shape independent of how
        # many rows arrive together
        xs = x.reshape(n_lead, L, in_ch)
        y = np.empty((n_lead, L, out_ch), dtype=DTYPE)
        z = np.empty((L, k * out_ch), dtype=DTYPE)
        b = bias if bias is not None else np.zeros(out_ch, dtype=DTYPE)
        for i in range(n_lead):
            np.matmul(xs[i], kernel.taps, out=z)
            _shift_add(z.reshape(L, k, out_ch), b, y[i])
        y = y.reshape(*lead, L, out_ch)
        bias_done = True
    elif mode == CAUSAL:
        if history is None:
            history = np.zeros(lead + (k - 1, in_ch), dtype=DTYPE)
        elif history.shape != lead + (k - 1, in_ch):
            raise ConfigError(
                f"causal padding must be exactly k-1={k - 1} frames, got history {history.shape}"
            )
        xp = np.concatenate([history.astype(DTYPE, copy=False), x], axis=-2)
        flat = xp.reshape(n_lead, L + k - 1, in_ch)
        y = np.empty((n_lead, L, out_ch), dtype=DTYPE)
        for t in range(L):
            y[:, t, :] = flat[:, t : t + k, :].reshape(n_lead, k * in_ch) @ kernel.window
        y = y.reshape(*lead, L, out_ch)
    else:
        raise ConfigError(f"unknown conv mode {mode!r}")

    _count(counter, macs=n_lead * L * out_ch * in_ch * k)
    if bias is not None:
        if not bias_done:
            y += bias
        _count(counter, adds=n_lead * L * out_ch)
    return y


# --------------------------------------------------------------------------
# LSTM

# Batches smaller than this run the compiled single-row recurrence; larger
# ones use one GEMM per step plus vectorised gate arithmetic.
SMALL_BATCH = 8


@dataclass
class LSTMParams:
    """One LSTM direction. Gate order is input, forget, candidate, output."""

    Wx: np.ndarray  # [4h, in]
    Wh: np.ndarray  # [4h, h]
    b: np.ndarray  # [4h]

    def __post_init__(self):
        self.Wx = np.asarray(self.Wx, dtype=DTYPE)
        self.Wh = np.asarray(self.Wh, dtype=DTYPE)
        self.b = np.asarray(self.b, dtype=DTYPE)
        four_h, _ = self.Wx.shape
        if four_h % 4 or self.Wh.shape != (four_h, four_h // 4) or self.b.shape != (four_h,):
            raise ShapeError(
                f"inconsistent LSTM shapes Wx{self.Wx.shape} Wh{self.Wh.shape} b{self.b.shape}"
            )
        self.WxT = np.ascontiguousarray(self.Wx.T)
        self.WhT = np.ascontiguousarray(self.Wh.T)
        # [4h, in + h + 1] against a stacked [x; h; 1] column block: one
        # product per step yields all pre-activations, bias included
        self.fused = np.ascontiguousarray(np.concatenate([self.Wx, self.Wh, self.b[:, None]], axis=1))

    @property
    def hidden(self):
        return self.Wh.shape[1]

    @property
    def input_size(self):
        return self.Wx.shape[1]


# Gate nonlinearities use a clamped odd rational approximation of tanh
# (max relative error ~3e-7 over float32) that compiles to straight-line
# vector code, unlike libm calls. sigmoid(z) = 0.5 + 0.5 * tanh(z / 2).
_TANH_CLAMP = 7.90531110763549805
_TANH_P = (
    -2.76076847742355e-16,
    2.00018790482477e-13,
    -8.60467152213735e-11,
    5.12229709037114e-08,
    1.48572235717979e-05,
    6.37261928875436e-04,
    4.89352455891786e-03,
)
_TANH_Q = (1.19825839466702e-06, 1.18534705686654e-04, 2.26843463243900e-03, 4.89352518554385e-03)
_JIT = dict(cache=True, fastmath=True, error_model="numpy")


@numba.njit(inline="always", **_JIT)
def _tanh_r(z):
    v = min(max(z, np.float32(-_TANH_CLAMP)), np.float32(_TANH_CLAMP))
    v2 = v * v
    p = np.float32(_TANH_P[0])
    p = p * v2 + np.float32(_TANH_P[1])
    p = p * v2 + np.float32(_TANH_P[2])
    p = p * v2 + np.float32(_TANH_P[3])
    p = p * v2 + np.float32(_TANH_P[4])
    p = p * v2 + np.float32(_TANH_P[5])
    p = p * v2 + np.float32(_TANH_P[6])
    q = np.float32(_TANH_Q[0])
    q = q * v2 + np.float32(_TANH_Q[1])
    q = q * v2 + np.float32(_TANH_Q[2])
    q = q * v2 + np.float32(_TANH_Q[3])
    return p * v / q


@numba.njit(inline="always", **_JIT)
def _sigmoid_r(z):
    half = np.float32(0.5)
    return half + half * _tanh_r(half * z)


@numba.njit(inline="always", **_JIT)
def _cell(g, h, c):
    # g: [4h] pre-activations (bias included); h, c: [h] updated in place.
    # Each row runs the same fixed-length loop, so results never depend on
    # how many rows share the call.
    hid = h.shape[0]
    for j in range(hid):
        gi = _sigmoid_r(g[j])
        gf = _sigmoid_r(g[hid + j])
        gc = _tanh_r(g[2 * hid + j])
        go = _sigmoid_r(g[3 * hid + j])
        cn = gf * c[j] + gi * gc
        c[j] = cn
        h[j] = go * _tanh_r(cn)


@numba.njit(**_JIT)
def _cells_t(g, h, c):
    # column layout: g [4h, B], h and c [h, B]
    hid = h.shape[0]
    for j in range(hid):
        gi, gf, gc, go = g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]
        hj, cj = h[j], c[j]
        for r in range(hj.shape[0]):
            cn = _sigmoid_r(gf[r]) * cj[r] + _sigmoid_r(gi[r]) * _tanh_r(gc[r])
            cj[r] = cn
            hj[r] = _sigmoid_r(go[r]) * _tanh_r(cn)


@numba.njit(inline="always", **_JIT)
def _accumulate(g, v, WT):
    # g += v @ WT with the output index innermost, so the loop vectorises
    for k in range(v.shape[0]):
        vk = v[k]
        wk = WT[k]
        for j in range(g.shape[0]):
            g[j] += vk * wk[j]


@numba.njit(**_JIT)
def _recur_small(x, WxT, WhT, b, h, c, reverse):
    # x: [L, B, in]; h, c: [B, hid] updated in place. The input product is
    # taken per step so results never depend on L.
    L, B = x.shape[0], x.shape[1]
    y = np.empty((L, B, h.shape[1]), dtype=np.float32)
    g = np.empty(b.shape[0], dtype=np.float32)
    for s in range(L):
        step = L - 1 - s if reverse else s
        for r in range(B):
            g[:] = b
            _accumulate(g, x[step, r], WxT)
            _accumulate(g, h[r], WhT)
            _cell(g, h[r], c[r])
            y[step, r] = h[r]
    return y


@numba.njit(**_JIT)
def _recur_projected(xp, WhT, b, h, c, reverse):
    # xp: [L, B, 4h] input products computed up front (bidirectional use only)
    L, B = xp.shape[0], xp.shape[1]
    y = np.empty((L, B, h.shape[1]), dtype=np.float32)
    g = np.empty(b.shape[0], dtype=np.float32)
    for s in range(L):
        step = L - 1 - s if reverse else s
        for r in range(B):
            xr = xp[step, r]
            for j in range(g.shape[0]):
                g[j] = xr[j] + b[j]
            _accumulate(g, h[r], WhT)
            _cell(g, h[r], c[r])
            y[step, r] = h[r]
    return y


def _recur_vector(x, p, h, c, reverse):
    # Batch along columns: [4h, in+h+1] @ [in+h+1, B] runs measurably faster
    # in BLAS than the row-major orientation for these shapes. The hidden
    # state lives inside the product's right operand, so the cell update
    # writes the next step's input directly. h, c are read, never written.
    L, B, n_in = x.shape
    hid = p.hidden
    y = np.empty((L, B, hid), dtype=DTYPE)
    buf = np.empty((n_in + hid + 1, B), dtype=DTYPE)
    buf[-1] = 1.0
    xin, ht = buf[:n_in], buf[n_in:-1]
    ht[...] = h.T
    ct = np.array(c.T, order="C")  # always a copy, even when c.T is already contiguous
    g = np.empty((4 * hid, B), dtype=DTYPE)
    for s in range(L):
        step = L - 1 - s if reverse else s
        xin[...] = x[step].T
        np.matmul(p.fused, buf, out=g)
        _cells_t(g, ht, ct)
        y[step] = ht.T
    return y, np.ascontiguousarray(ht.T), np.ascontiguousarray(ct.T)


def _recur(x, p, h, c, reverse):
    """``(y, h_final, c_final)``; the given ``h``, ``c`` are left untouched."""
    if x.shape[1] < SMALL_BATCH:
        h, c = h.copy(), c.copy()
        y = _recur_small(x, p.WxT, p.WhT, p.b, h, c, reverse)
        return y, h, c
    return _recur_vector(x, p, h, c, reverse)


def _lstm_counts(steps, in_dim, hid):
    # per step and batch row: gate products, bias add, cell/output update
    return dict(macs=steps * 4 * hid * (in_dim + hid), adds=steps * 8 * hid, nonlins=steps * 5 * hid)


def _check_state(state, batch_shape, hid):
    h, c = state
    h = np.asarray(h, dtype=DTYPE)
    c = np.asarray(c, dtype=DTYPE)
    if h.shape != batch_shape + (hid,) or c.shape != h.shape:
        raise ShapeError(f"state shapes {h.shape}/{c.shape} != {batch_shape + (hid,)}")
    return h, c


def lstm_step(x, state, params, counter=None):
    """One LSTM cell update. ``x`` is ``[..., in]``; returns ``(h', (h', c'))``."""
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"input dim {x.shape[-1]} != {params.input_size}")
    y, state = lstm_seq(x[None], params, state=state, counter=counter)
    return y[0], state


def lstm_seq(x, params, direction="forward", state=None, counter=None):
    """Run an LSTM over axis 0 of ``x`` (shape ``[L, ..., in]``).

    Forward mode returns ``(y, (h, c))`` so the final state can seed the next
    call. ``direction="bidirectional"`` takes a (forward, backward) pair of
    :class:`LSTMParams`, starts from zero state and returns only
    ``y`` of shape ``[L, ..., 2h]``.

    Each step's arithmetic depends only on the batch shape, never on ``L``,
    so forward outputs on a prefix equal the outputs for the truncated input.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim < 2:
        raise ShapeError("lstm_seq expects [L, ..., in]")
    L = x.shape[0]
    batch_shape = x.shape[1:-1]
    flat = np.ascontiguousarray(x.reshape(L, -1, x.shape[-1]))
    B = flat.shape[1]

    if direction == "forward":
        hid = params.hidden
        if x.shape[-1] != params.input_size:
            raise ShapeError(f"input dim {x.shape[-1]} != {params.input_size}")
        if state is None:
            h = np.zeros((B, hid), DTYPE)
            c = np.zeros((B, hid), DTYPE)
        else:
            h, c = _check_state(state, batch_shape, hid)
            h = h.reshape(B, hid)
            c = c.reshape(B, hid)
        y, h, c = _recur(flat, params, h, c, False)
        _count(counter, **_lstm_counts(L * B, params.input_size, hid))
        return (
            y.reshape(L, *batch_shape, hid),
            (h.reshape(*batch_shape, hid), c.reshape(*batch_shape, hid)),
        )

    if direction == "bidirectional":
        outs = []
        for p, rev in zip(params, (False, True)):
            if x.shape[-1] != p.input_size:
                raise ShapeError(f"input dim {x.shape[-1]} != {p.input_size}")
            h = np.zeros((B, p.hidden), DTYPE)
            c = np.zeros((B, p.hidden), DTYPE)
            if B < SMALL_BATCH:
                xp = (flat.reshape(L * B, -1) @ p.WxT).reshape(L, B, -1)
                outs.append(_recur_projected(xp, p.WhT, p.b, h, c, rev))
            else:
                outs.append(_recur_vector(flat, p, h, c, rev)[0])
            _count(counter, **_lstm_counts(L * B, p.input_size, p.hidden))
        y = np.concatenate(outs, axis=-1)
        return y.reshape(L, *batch_shape, y.shape[-1])

    raise ConfigError(f"unknown LSTM direction {direction!r}")
