"""Build the band-wise training target for a clean/noisy pair.

For each Mel band the target is sqrt(clean power / noisy power), clipped
to 1. Bands dominated by the harmonic source come out near 1, noise-only
bands near 0. Applying the target as a mask and lifting it back to FFT
bins gives a rough waveform for a listening check.

    python demos/training_target.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from melstream import dsp, mel_config, save
from melstream.cli import target_mask
from melstream.stft2mel import filterbank_for
from melstream.wavio import write_wav

RATE = 16000


def main(out_dir="demo_out"):
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    cfg = mel_config()
    rng = np.random.default_rng(1)
    t = np.arange(2 * RATE) / RATE
    clean = sum(np.sin(2 * np.pi * 220 * k * t) / k for k in range(1, 6))
    clean = np.tile(0.1 * clean[:, None], (1, 6)).astype(np.float32)
    noise = (0.05 * rng.standard_normal(clean.shape)).astype(np.float32)
    noisy = clean + noise

    mask, S, X = target_mask(clean, noisy, cfg)
    fb = filterbank_for(cfg)
    centres = fb.band_edges[1:-1]
    band_mean = mask.mean(axis=0)
    print(f"target {mask.shape[0]} frames x {mask.shape[1]} bands, overall mean {mask.mean():.3f}")
    print("band  centre Hz  mean target")
    for b in range(0, 80, 8):
        print(f"{b:4d}  {centres[b]:9.0f}  {band_mean[b]:.3f}")
    top = np.argsort(band_mean)[-5:][::-1]
    print("highest bands:", ", ".join(f"{centres[b]:.0f} Hz" for b in top))

    spec = dsp.stft(noisy, cfg.stft)
    wave = dsp.pseudo_inverse_reconstruct(spec, mask, fb, cfg.stft, cfg.ref_channel)
    save({"mask": mask, "clean_power": S, "noisy_power": X}, out / "target.mmnt")
    write_wav(out / "noisy.wav", noisy[:, cfg.ref_channel], RATE)
    write_wav(out / "masked.wav", wave, RATE)
    snr = lambda ref, est: 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))  # noqa: E731
    # the first and last window are only partly overlapped, so score the interior
    edge = cfg.stft.fft_size
    keep = slice(edge, min(len(wave), len(clean)) - edge)
    ref = clean[keep, cfg.ref_channel]
    print(f"\ninterior SNR: noisy {snr(ref, noisy[keep, cfg.ref_channel]):.1f} dB, masked {snr(ref, wave[keep]):.1f} dB")
    print(f"wrote {out}/target.mmnt, noisy.wav, masked.wav")


if __name__ == "__main__":
    main(*sys.argv[1:])
