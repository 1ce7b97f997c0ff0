"""Analytic operation and parameter accounting, configuration comparison,
and wall-clock real-time-factor benchmarking.

Row names match the :class:`~melstream.kernels.OpCounter` scopes used by
the runtime, so an instrumented forward pass can be compared row by row.
Counts cover the learnable network (compression module and backbone); the
fixed DSP front end (FFT, normalisation, Mel power) is not counted.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import backbone
from .config import PipelineConfig, fingerprint
from .kernels import ConfigError
from .stft2mel import filterbank_for, group_sizes
from .weights import param_specs

STFT_AXIS = "stft"  # rows iterated over FFT bins
BAND_AXIS = "band"  # rows iterated over the backbone's bands (Mel or linear)


@dataclass(frozen=True)
class LayerRow:
    name: str
    params: int
    macs: int  # per frame
    adds: int
    nonlins: int
    axis: str
    band_slope: int = 0  # d(macs)/d(bands along ``axis``)
    band_intercept: int = 0


@dataclass
class FlopsReport:
    rows: list
    fingerprint: str
    frames_per_second: float

    @property
    def macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def adds(self):
        return sum(r.adds for r in self.rows)

    @property
    def nonlins(self):
        return sum(r.nonlins for r in self.rows)

    @property
    def params(self):
        return sum(r.params for r in self.rows)

    @property
    def flops_per_sec(self):
        """2 x MACs per second of audio."""
        return 2 * self.macs * self.frames_per_second

    @property
    def all_ops_per_sec(self):
        """MAC FLOPs plus separately counted elementwise and nonlinear ops."""
        return (2 * self.macs + self.adds + self.nonlins) * self.frames_per_second

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_tsv(self):
        """One tab-separated record per layer, then a ``TOTAL`` record."""
        head = "layer\tparams\tmacs_per_frame\tadds_per_frame\tnonlins_per_frame\tband_axis\tband_slope\tband_intercept"
        lines = [f"# fingerprint: {self.fingerprint}", f"# frames_per_second: {self.frames_per_second:g}", head]
        for r in self.rows:
            lines.append(
                f"{r.name}\t{r.params}\t{r.macs}\t{r.adds}\t{r.nonlins}\t{r.axis}\t{r.band_slope}\t{r.band_intercept}"
            )
        lines.append(f"TOTAL\t{self.params}\t{self.macs}\t{self.adds}\t{self.nonlins}\t-\t-\t-")
        return "\n".join(lines) + "\n"

    def table(self):
        w = max(len(r.name) for r in self.rows)
        out = [f"config {self.fingerprint}", f"{'layer':<{w}}  {'params':>10}  {'MMAC/frame':>11}  {'share':>6}"]
        total = self.macs or 1
        for r in self.rows:
            out.append(f"{r.name:<{w}}  {r.params:>10d}  {r.macs / 1e6:>11.3f}  {100 * r.macs / total:>5.1f}%")
        out.append(f"{'total':<{w}}  {self.params:>10d}  {self.macs / 1e6:>11.3f}")
        out.append(f"params      {self.params / 1e6:.3f} M")
        out.append(f"FLOPs (MAC) {self.flops_per_sec / 1e9:.3f} G/s")
        out.append(f"ops (all)   {self.all_ops_per_sec / 1e9:.3f} G/s")
        return "\n".join(out)


# --------------------------------------------------------------------------
# analytic counts


def _linear(rows, n_in, n_out, bias=True):
    return dict(macs=rows * n_in * n_out, adds=rows * n_out if bias else 0, nonlins=0)


def _ln(rows, d):
    return dict(macs=2 * rows * d, adds=3 * rows * d, nonlins=rows)


def _lstm(steps, n_in, h):
    return dict(macs=steps * 4 * h * (n_in + h), adds=steps * 8 * h, nonlins=steps * 5 * h)


def _sum(*parts):
    out = dict(macs=0, adds=0, nonlins=0)
    for p in parts:
        for k in out:
            out[k] += p.get(k, 0)
    return out


def _raw_rows(cfg, n_freqs, n_bands):
    """``[(name, axis, counts)]`` per frame for explicit bin / band counts."""
    rows = []
    s = cfg.s2m
    D, M = s.dim, cfg.n_channels
    F, Fm = n_freqs, n_bands
    if cfg.frontend == "mel":
        act = dict(nonlins=F * D)

        def lin_block(name, n_in, relu):
            rows.append((name, STFT_AXIS, _sum(_linear(F, n_in, D), act if relu else {}, _ln(F, D))))

        def fcb(name, relu):
            conv = dict(macs=F * D * D * s.f_kernel, adds=F * D)
            rows.append((name, STFT_AXIS, _sum(conv, act if relu else {}, _ln(F, D))))

        if s.separate:
            lin_block("s2m.mag.lin", M, True)
            lin_block("s2m.pha.lin", 2 * M, False)
            for i in range(s.blocks):
                fcb(f"s2m.mag.fcb.{i}", True)
                fcb(f"s2m.pha.fcb.{i}", False)
                directions = ("p2m", "m2p") if s.comm == "bidirectional" else ("p2m",)
                for d in directions:
                    gate = _sum(_linear(F, D, D), dict(nonlins=F * D, adds=F * D))
                    rows.append((f"s2m.comm.{i}.{d}", STFT_AXIS, gate))
            rows.append(("s2m.mag.fb", BAND_AXIS, dict(macs=Fm * F * D)))
            rows.append(("s2m.pha.fb", BAND_AXIS, dict(macs=Fm * F * D, adds=Fm * D)))
            tsb_in = 2 * D
        else:
            lin_block("s2m.joint.lin", 2 * M, True)
            if s.variant == "joint-trainmel":
                # the grouped map's size follows the real filterbank; it is
                # affine in the band count only through the bias term
                support = sum(group_sizes(filterbank_for(cfg)))
                rows.append(("s2m.trainmel", BAND_AXIS, dict(macs=support * D, adds=Fm * D)))
            else:
                if s.has_fcb:
                    for i in range(s.blocks):
                        fcb(f"s2m.joint.fcb.{i}", True)
                rows.append(("s2m.joint.fb", BAND_AXIS, dict(macs=Fm * F * D)))
            tsb_in = D
        if s.has_tsb:
            rows.append(("s2m.tsb", BAND_AXIS, dict(macs=Fm * D * tsb_in * s.t_kernel, adds=Fm * D)))

    b = cfg.backbone
    ins = backbone.module_inputs(cfg)
    B = Fm
    for m in range(1, 5):
        if m in b.identity:
            continue
        h, d = b.hidden[m - 1], b.dims[m - 1]
        ndir = 2 if m in backbone.FREQ_MODULES else 1
        lstm = _lstm(B, ins[m - 1], h)
        rows.append((f"bb.m{m}.lstm", BAND_AXIS, {k: ndir * v for k, v in lstm.items()}))
        rows.append((f"bb.m{m}.lin", BAND_AXIS, _linear(B, ndir * h, d)))
    rows.append(("bb.out", BAND_AXIS, _sum(_linear(B, b.dims[3], 1), dict(nonlins=B))))
    return [(name, axis, _sum(c)) for name, axis, c in rows]


def count(cfg: PipelineConfig) -> FlopsReport:
    """Per-layer parameters and per-frame operation counts for ``cfg``."""
    F, B = cfg.stft.n_freqs, cfg.n_bands
    base = _raw_rows(cfg, F, B)
    # re-evaluate with one and two extra bins / bands to read off (and check)
    # each row's affine dependence on its own axis
    plus = {
        STFT_AXIS: (_raw_rows(cfg, F + 1, B), _raw_rows(cfg, F + 2, B)),
        BAND_AXIS: (_raw_rows(cfg, F, B + 1), _raw_rows(cfg, F, B + 2)),
    }
    specs = param_specs(cfg)
    rows = []
    for idx, (name, axis, c) in enumerate(base):
        n = F if axis == STFT_AXIS else B
        m1 = plus[axis][0][idx][2]["macs"]
        m2 = plus[axis][1][idx][2]["macs"]
        slope = m1 - c["macs"]
        if m2 - m1 != slope:
            raise AssertionError(f"{name}: MACs not affine in band count")
        params = sum(s.size for s in specs if s.name.startswith(name + "."))
        rows.append(
            LayerRow(
                name=name,
                params=params,
                macs=c["macs"],
                adds=c["adds"],
                nonlins=c["nonlins"],
                axis=axis,
                band_slope=slope,
                band_intercept=c["macs"] - slope * n,
            )
        )
    counted = sum(r.params for r in rows)
    if counted != sum(s.size for s in specs):
        raise AssertionError("some parameters are not attributed to a ledger row")
    return FlopsReport(rows, fingerprint(cfg), cfg.stft.frames_per_second)


# --------------------------------------------------------------------------
# comparison


def reduction(flops, reference_flops):
    """Fractional saving of ``flops`` relative to ``reference_flops``."""
    if reference_flops <= 0:
        raise ValueError("reference FLOPs must be positive")
    return 1.0 - flops / reference_flops


@dataclass
class Comparison:
    report: FlopsReport
    reference: FlopsReport

    @property
    def ratio(self):
        return self.report.flops_per_sec / self.reference.flops_per_sec

    @property
    def reduction(self):
        return reduction(self.report.flops_per_sec, self.reference.flops_per_sec)

    @property
    def reduction_all_ops(self):
        return reduction(self.report.all_ops_per_sec, self.reference.all_ops_per_sec)

    def summary(self):
        return "\n".join(
            [
                f"config    {self.report.fingerprint}: {self.report.flops_per_sec / 1e9:.3f} GFLOPs/s, "
                f"{self.report.params / 1e6:.3f} M params",
                f"reference {self.reference.fingerprint}: {self.reference.flops_per_sec / 1e9:.3f} GFLOPs/s, "
                f"{self.reference.params / 1e6:.3f} M params",
                f"ratio     {self.ratio:.4f}",
                f"reduction {100 * self.reduction:.1f}% (MAC FLOPs), {100 * self.reduction_all_ops:.1f}% (all ops)",
            ]
        )


def compare(cfg, reference_cfg):
    """How much cheaper ``cfg`` is than ``reference_cfg``."""
    return Comparison(count(cfg), count(reference_cfg))


# --------------------------------------------------------------------------
# runtime


@dataclass
class RtfResult:
    audio_seconds: float
    wall_seconds: float
    stages: dict = field(default_factory=dict)

    @property
    def rtf(self):
        return self.wall_seconds / self.audio_seconds

    def summary(self):
        parts = ", ".join(f"{k} {v:.3f}s" for k, v in sorted(self.stages.items()))
        return (
            f"audio {self.audio_seconds:.2f}s  wall {self.wall_seconds:.3f}s  "
            f"RTF {self.rtf:.3f}  ({parts})"
        )


def bench_rtf(cfg, weights, seconds=30.0, seed=0, warmup_seconds=0.5):
    """Stream ``seconds`` of seeded noise through the frame-by-frame path.

    BLAS is limited to one thread for the measurement. A short warm-up
    (compilation, cache fill) is excluded from the timed run.
    """
    from .engine import Engine  # local: engine imports the kernels this module shares

    if not seconds > 0 or not math.isfinite(seconds):
        raise ConfigError("benchmark duration must be a positive number of seconds")
    fs, hop = cfg.stft.sample_rate, cfg.stft.hop
    n = int(round(seconds * fs)) // hop * hop
    if n < cfg.stft.fft_size:
        raise ConfigError("benchmark duration is shorter than one analysis window")
    rng = np.random.default_rng(seed)
    wave = (0.1 * rng.standard_normal((n, cfg.n_channels))).astype(np.float32)
    with threadpool_limits(limits=1):
        engine = Engine(cfg, weights, profile=True)
        warm = int(warmup_seconds * fs) // hop * hop
        if warm >= cfg.stft.fft_size:
            engine.streaming(wave[:warm])
        engine.stage_seconds.clear()
        state = engine.open_stream()
        t0 = time.perf_counter()
        for i in range(0, n, hop):
            engine.push_block(state, wave[i : i + hop])
        wall = time.perf_counter() - t0
    return RtfResult(n / fs, wall, dict(engine.stage_seconds))


__all__ = [
    "BAND_AXIS",
    "Comparison",
    "FlopsReport",
    "LayerRow",
    "RtfResult",
    "STFT_AXIS",
    "bench_rtf",
    "compare",
    "count",
    "reduction",
]
