"""Where the multiply-accumulates go, and what Mel compression saves.

The ledger counts every layer analytically. Most of the backbone runs once
per frequency band, so its cost grows linearly with the band count; the
ledger exposes that slope per layer. This script prints the per-layer
budget for both front ends, then sweeps the number of Mel bands.

    python demos/complexity_budget.py
"""

from melstream import compare, count, linear_config, mel_config
from melstream.ledger import BAND_AXIS


def share(report, prefix):
    return sum(r.macs for r in report.rows if r.name.startswith(prefix)) / report.macs


def main():
    mel, lin = count(mel_config()), count(linear_config())
    print("linear-frequency backbone (257 bins)")
    print(lin.table(), "\n")
    print("Mel front end (80 bands)")
    print(mel.table(), "\n")
    print(compare(mel_config(), linear_config()).summary(), "\n")

    print(f"compression module share of Mel MACs: {100 * share(mel, 's2m.'):.1f}%")
    print(f"two time-axis LSTMs share:            {100 * (share(mel, 'bb.m2') + share(mel, 'bb.m3')):.1f}%\n")

    slope = sum(r.band_slope for r in mel.rows if r.axis == BAND_AXIS)
    print(f"every extra band costs {slope / 1e6:.2f} MMAC per frame in the backbone\n")

    print("bands  GFLOPs/s  reduction vs linear")
    for bands in (40, 64, 80, 96, 128):
        cmp = compare(mel_config(n_mels=bands), linear_config())
        print(f"{bands:5d}  {cmp.report.flops_per_sec / 1e9:8.2f}  {100 * cmp.reduction:6.1f}%")


if __name__ == "__main__":
    main()
