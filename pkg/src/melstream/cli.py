"""``melstream`` command line.

Exit codes: 0 ok, 2 usage, 3 I/O (unreadable file, malformed WAV or
archive), 4 validation (bad config value, weights not matching the
configuration, channel or sample-rate mismatch).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dsp, ledger, weights
from .config import (
    VARIANTS,
    dump_config,
    fingerprint,
    linear_config,
    load_config,
    mel_config,
    parse_config_text,
    variant_config,
)
from .engine import Engine
from .kernels import ConfigError, ShapeError
from .stft2mel import filterbank_for
from .wavio import WavError, read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4

PRESETS = {"mel": mel_config, "linear": linear_config}
PRESETS.update({v: (lambda v=v: variant_config(v)) for v in VARIANTS})

_IO_ERRORS = (OSError, WavError, weights.ArchiveError)
_VALIDATION_ERRORS = (ConfigError, ShapeError, weights.ManifestError)


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers


def resolve_config(spec, overrides=()):
    """A preset name or a ``key = value`` file, then ``KEY=VALUE`` overrides."""
    if spec is None or spec in PRESETS:
        cfg = PRESETS[spec or "mel"]()
    else:
        cfg = load_config(spec)
    if overrides:
        cfg = parse_config_text("\n".join(overrides), base=cfg)
    return cfg


def _config(args, which="config"):
    return resolve_config(getattr(args, which), args.set or ())


def _load_weights(path, cfg):
    tensors = weights.load(path)
    weights.check(tensors, cfg)
    return tensors


def _read(path, cfg):
    audio, rate = read_wav(path)
    if rate != cfg.stft.sample_rate:
        raise ConfigError(f"{path}: sample rate {rate} Hz, configuration expects {cfg.stft.sample_rate} Hz")
    return audio


def _save_archive(tensors, path, cfg):
    weights.save(weights.with_fingerprint(tensors, fingerprint(cfg)), path)


def _fmt(v):
    # repr-style shortest round-trip float text never depends on the locale
    return format(float(v), ".9g")


# --------------------------------------------------------------------------
# commands


def write_frames_csv(path, frames, cfg):
    """One comma-separated row per frame, after a fingerprint comment line."""
    lines = [f"# fingerprint: {fingerprint(cfg)}"]
    lines.extend(",".join(_fmt(v) for v in row) for row in frames)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def enhance_file(src, dst, cfg, weights_path, mode, out_wav=None):
    """Enhance one WAV; returns the number of output frames.

    A ``.csv`` destination receives the LogMel rows, with the mask written
    next to it as ``<stem>.mask.csv``; anything else gets a tensor archive.
    """
    tensors = _load_weights(weights_path, cfg)
    audio = _read(src, cfg)
    if audio.shape[1] != cfg.n_channels:
        raise ConfigError(f"{src}: {audio.shape[1]} channels, configuration expects {cfg.n_channels}")
    engine = Engine(cfg, tensors)
    res = engine.streaming(audio) if mode == "streaming" else engine.offline(audio)
    dst = Path(dst)
    if dst.suffix.lower() == ".csv":
        write_frames_csv(dst, res.logmel, cfg)
        write_frames_csv(dst.with_name(f"{dst.stem}.mask.csv"), res.mask, cfg)
    else:
        _save_archive({"logmel": res.logmel, "mask": res.mask}, dst, cfg)
    if out_wav is not None:
        spec = dsp.stft(audio, cfg.stft)[: res.mask.shape[0]]
        wave = dsp.pseudo_inverse_reconstruct(spec, res.mask, engine.fb, cfg.stft, cfg.ref_channel)
        write_wav(out_wav, wave, cfg.stft.sample_rate)
    return res.logmel.shape[0]


def cmd_enhance(args):
    cfg = _config(args)
    if args.ref_ch is not None:
        cfg = parse_config_text(f"ref_channel = {args.ref_ch}", base=cfg)
    inputs = [Path(p) for p in args.inputs]
    if len(inputs) > 1:
        out_dir = Path(args.out_logmel)
        if args.out_wav:
            raise CliError("--out-wav takes a single --in file", EXIT_USAGE)
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(p, out_dir / f"{p.stem}.mmnt") for p in inputs]
    else:
        jobs = [(inputs[0], Path(args.out_logmel))]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(enhance_file, s, d, cfg, args.weights, args.mode) for s, d in jobs]
            frames = [f.result() for f in futures]
    else:
        frames = [enhance_file(s, d, cfg, args.weights, args.mode, args.out_wav) for s, d in jobs]
    for (src, dst), t in zip(jobs, frames):
        print(f"{src} -> {dst}: {t} frames x {cfg.n_bands} bands ({args.mode}, config {fingerprint(cfg)})")
    return EXIT_OK


def target_mask(clean, noisy, cfg):
    """Band power-ratio mask of ``clean`` against ``noisy`` on the reference channel."""
    if clean.shape != noisy.shape:
        raise ShapeError(f"clean {clean.shape} and noisy {noisy.shape} audio differ in shape")
    ch = cfg.ref_channel if clean.shape[1] > 1 else 0
    if ch >= clean.shape[1]:
        raise ConfigError(f"reference channel {ch + 1} outside 1..{clean.shape[1]}")
    fb = filterbank_for(cfg) if cfg.frontend == "mel" else dsp.identity_filterbank(cfg.stft.n_freqs)
    S = dsp.mel_power(dsp.stft(clean, cfg.stft), fb, ch)
    X = dsp.mel_power(dsp.stft(noisy, cfg.stft), fb, ch)
    return dsp.mel_prm(S, X), S, X


def cmd_target(args):
    cfg = _config(args)
    if args.ref_ch is not None:
        cfg = parse_config_text(f"ref_channel = {args.ref_ch}", base=cfg)
    mask, S, X = target_mask(_read(args.clean, cfg), _read(args.noisy, cfg), cfg)
    _save_archive({"mask": mask, "clean_power": S, "noisy_power": X}, args.out, cfg)
    print(f"{args.out}: mask {mask.shape[0]} x {mask.shape[1]} (config {fingerprint(cfg)})")
    return EXIT_OK


def cmd_flops(args):
    cfg = _config(args)
    report = ledger.count(cfg)
    print(report.table())
    if args.tsv:
        Path(args.tsv).write_text(report.to_tsv(), encoding="utf-8")
    if args.compare_config is not None:
        ref = _config(args, "compare_config")
        cmp = ledger.Comparison(report, ledger.count(ref))
        if args.compare_tsv:
            Path(args.compare_tsv).write_text(cmp.reference.to_tsv(), encoding="utf-8")
        print()
        print(cmp.summary())
    return EXIT_OK


def cmd_bench(args):
    cfg = _config(args)
    tensors = _load_weights(args.weights, cfg) if args.weights else weights.random_init(cfg, args.seed)
    res = ledger.bench_rtf(cfg, tensors, seconds=args.seconds, seed=args.seed)
    print(f"config {fingerprint(cfg)}")
    print(res.summary())
    print(f"RTF {res.rtf:.4f}")
    return EXIT_OK


def cmd_init_weights(args):
    cfg = _config(args)
    tensors = weights.random_init(cfg, args.seed)
    _save_archive(tensors, args.out, cfg)
    print(f"{args.out}: {len(tensors)} tensors, {weights.n_params(cfg)} parameters, seed {args.seed}")
    return EXIT_OK


def cmd_dump_filterbank(args):
    cfg = _config(args)
    fb = filterbank_for(cfg) if cfg.frontend == "mel" else dsp.identity_filterbank(cfg.stft.n_freqs)
    lines = [f"# fingerprint: {fingerprint(cfg)}", f"# bands: {fb.n_bands} bins: {fb.n_freqs} scale: {fb.scale}"]
    lines.extend(",".join(_fmt(v) for v in row) for row in fb.weights)
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{args.out}: {fb.n_bands} x {fb.n_freqs}")
    return EXIT_OK


def cmd_dump_manifest(args):
    cfg = _config(args)
    lines = [f"# fingerprint: {fingerprint(cfg)}"]
    lines.extend(f"{name}\t{'x'.join(map(str, shape))}" for name, shape in weights.manifest(cfg).items())
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_dump_config(args):
    cfg = _config(args)
    sys.stdout.write(f"# fingerprint: {fingerprint(cfg)}\n" + dump_config(cfg))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def read_csv_matrix(path):
    """Parse a ``dump-filterbank`` or frame CSV back into an array."""
    rows = [
        [float(v) for v in line.split(",")]
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#")
    ]
    return np.array(rows)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        help=f"config file (key = value lines) or preset: {', '.join(PRESETS)} (default mel)",
    )
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)"
    )

    p = argparse.ArgumentParser(prog="melstream", description="Causal multichannel Mel-domain speech enhancement.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser(
        "enhance",
        parents=[common],
        help="enhance multichannel WAV files",
        description=(
            "Write LogMel and mask archives for each input. The streaming path emits its first frame "
            "once one full analysis window has arrived (fft_size samples, 32 ms at the defaults); "
            "every later frame follows one hop (8 ms) of input."
        ),
    )
    e.add_argument("--in", dest="inputs", action="append", required=True, metavar="WAV", help="input (repeatable)")
    e.add_argument("--weights", required=True)
    e.add_argument(
        "--out-logmel", required=True, help="output archive (or .csv), or directory for several inputs"
    )
    e.add_argument("--out-wav", help="crude waveform via the lifted mask (listening check only)")
    e.add_argument("--ref-ch", type=int, help="one-based reference microphone (default 5)")
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--streaming", dest="mode", action="store_const", const="streaming")
    mode.add_argument("--offline", dest="mode", action="store_const", const="offline")
    e.add_argument("--jobs", type=int, default=1, help="worker processes for several inputs")
    e.set_defaults(func=cmd_enhance, mode="streaming")

    t = sub.add_parser("target", parents=[common], help="band power-ratio training target")
    t.add_argument("--clean", required=True)
    t.add_argument("--noisy", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--ref-ch", type=int, help="one-based reference microphone for multichannel input")
    t.set_defaults(func=cmd_target)

    f = sub.add_parser("flops", parents=[common], help="per-layer parameter and operation ledger")
    f.add_argument("--compare-config", help="reference config; reduction = 1 - config / reference")
    f.add_argument("--tsv", help="write the config's ledger as tab-separated records")
    f.add_argument("--compare-tsv", help="write the reference's ledger as tab-separated records")
    f.set_defaults(func=cmd_flops)

    b = sub.add_parser("bench", parents=[common], help="single-thread real-time factor of the streaming path")
    b.add_argument("--seconds", type=float, default=30.0)
    b.add_argument("--weights", help="archive to use (default: seeded random weights)")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("init-weights", parents=[common], help="seeded random weights")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_init_weights)

    d = sub.add_parser("dump-filterbank", parents=[common], help="filterbank matrix as CSV")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dump_filterbank)

    m = sub.add_parser("dump-manifest", parents=[common], help="expected tensor names and shapes")
    m.add_argument("--out")
    m.set_defaults(func=cmd_dump_manifest)

    c = sub.add_parser("dump-config", parents=[common], help="print the effective configuration")
    c.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "jobs", 1) < 1:
            raise CliError("--jobs must be >= 1", EXIT_USAGE)
        return args.func(args)
    except CliError as exc:
        print(f"melstream: error: {exc}", file=sys.stderr)
        return exc.code
    except _IO_ERRORS as exc:
        print(f"melstream: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _VALIDATION_ERRORS as exc:
        print(f"melstream: invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
