"""Acceptance criteria, one test each, with wall-clock bounds.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import re
import time

import numpy as np
import pytest

import oracles
from melstream import Engine, OpCounter, cli, dsp, kernels, ledger, weights
from melstream import config as C
from melstream.backbone import Backbone

HOP, FFT = 128, 512


def note(request, text):
    request.node.user_properties.append(("detail", text))


def wave(seed, seconds, channels=6):
    rng = np.random.default_rng(seed)
    return (0.1 * rng.standard_normal((int(seconds * 16000), channels))).astype(np.float32)


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / f"{name}.cfg"
    path.write_text(C.dump_config(cfg))
    return str(path)


# --------------------------------------------------------------------------


@pytest.mark.criterion(1, "FLOPs reduction Mel vs linear in [50%, 70%]")
def test_flops_reduction(tmp_path, capsys, request):
    mel = write_cfg(tmp_path, "mel", C.mel_config())
    lin = write_cfg(tmp_path, "linear", C.linear_config())
    t0 = time.perf_counter()
    code = cli.main(["flops", "--config", mel, "--compare-config", lin])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    match = re.search(r"reduction ([\d.]+)% \(MAC FLOPs\), ([\d.]+)% \(all ops\)", out)
    assert code == 0 and match
    red, red_all = float(match.group(1)), float(match.group(2))
    note(request, f"reduction {red:.1f}% (all ops {red_all:.1f}%), {elapsed:.2f}s")
    assert 50.0 <= red <= 70.0
    assert elapsed < 1.0


@pytest.mark.criterion(2, "parameter totals within 10% of 1.85 M / 2.04 M")
def test_parameter_calibration(request):
    t0 = time.perf_counter()
    lin = ledger.count(C.linear_config()).params
    mel = ledger.count(C.mel_config()).params
    elapsed = time.perf_counter() - t0
    dl, dm = lin / 1.85e6 - 1, mel / 2.04e6 - 1
    note(request, f"linear {lin} ({100 * dl:+.1f}%), mel {mel} ({100 * dm:+.1f}%), {elapsed:.2f}s")
    assert abs(dl) <= 0.10 and abs(dm) <= 0.10
    assert lin == weights.n_params(C.linear_config()) and mel == weights.n_params(C.mel_config())
    assert elapsed < 1.0


@pytest.mark.criterion(3, "analytic MACs equal instrumented counts, all configurations")
def test_ledger_exactness(request):
    cfgs = {"mel": C.mel_config(), "linear": C.linear_config()}
    cfgs.update({v: C.variant_config(v) for v in C.VARIANTS})
    x = wave(0, 1.0)
    t0 = time.perf_counter()
    mismatches = []
    for name, cfg in cfgs.items():
        counter = OpCounter()
        out = Engine(cfg, weights.random_init(cfg, 1), counter=counter).offline(x)
        T = out.mask.shape[0]
        report = ledger.count(cfg)
        if set(counter.by_layer) != {r.name for r in report.rows}:
            mismatches.append(f"{name}: scopes differ")
        for r in report.rows:
            if counter.by_layer.get(r.name) != [T * r.macs, T * r.adds, T * r.nonlins]:
                mismatches.append(f"{name}:{r.name}")
        if counter.macs != T * report.macs:
            mismatches.append(f"{name}: total")
    elapsed = time.perf_counter() - t0
    note(request, f"{len(cfgs)} configurations, {len(mismatches)} mismatches, {elapsed:.1f}s")
    assert not mismatches, mismatches
    assert elapsed < 30.0


@pytest.mark.slow
@pytest.mark.criterion(4, "end-to-end causality over 100 seeded 3 s inputs")
def test_end_to_end_causality(request):
    cfg = C.mel_config()
    engine = Engine(cfg, weights.random_init(cfg, 0))
    engine.offline(wave(0, 0.1))  # compile outside the timed loop
    t0 = time.perf_counter()
    violations = ineffective = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        x = wave(seed, 3.0)
        base = engine.offline(x)
        T = base.mask.shape[0]
        t = int(rng.integers(0, T - 1))
        y = x.copy()
        start = t * HOP + FFT  # first sample outside every frame <= t
        y[start:] = (0.1 * rng.standard_normal(y[start:].shape)).astype(np.float32)
        got = engine.offline(y)
        if not (
            np.array_equal(got.logmel[: t + 1], base.logmel[: t + 1])
            and np.array_equal(got.mask[: t + 1], base.mask[: t + 1])
        ):
            violations += 1
        if np.array_equal(got.logmel[t + 1], base.logmel[t + 1]):
            ineffective += 1
    elapsed = time.perf_counter() - t0
    note(request, f"{violations} violations, {ineffective} ineffective perturbations, {elapsed:.0f}s")
    assert violations == 0 and ineffective == 0
    assert elapsed < 300.0


@pytest.mark.slow
@pytest.mark.criterion(5, "streaming equals offline within 1e-5 over 20 seeded 5 s inputs")
def test_streaming_equals_offline(request):
    cfg = C.mel_config()
    engine = Engine(cfg, weights.random_init(cfg, 2))
    engine.offline(wave(0, 0.1))
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        x = wave(200 + seed, 5.0)
        st, off = engine.streaming(x), engine.offline(x)
        assert st.logmel.shape == off.logmel.shape
        worst = max(worst, float(np.max(np.abs(st.logmel - off.logmel))))
    elapsed = time.perf_counter() - t0
    note(request, f"max |diff| {worst:.2e}, {elapsed:.0f}s")
    assert worst <= 1e-5
    assert elapsed < 120.0


@pytest.mark.criterion(6, "Mel-PRM target equals per-bin oracle within 1e-6")
def test_mel_prm_oracle(tmp_path, write_wav, request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    # route 1: the mask function on random spectra plus the boundary cases
    X = rng.gamma(1.0, 2.0, size=(50, 80)).astype(np.float32)
    S = (X * rng.uniform(0, 3, size=X.shape)).astype(np.float32)
    S[0], S[1], S[2] = 0, X[1], 4 * X[2]
    X[3, :10], S[3, :5] = 0, 0
    err_fn = float(np.max(np.abs(dsp.mel_prm(S, X) - oracles.mel_prm(S, X))))
    # route 2: the target command on WAV pairs, checked against its stored powers
    noisy = wave(60, 1.0)
    pairs = {
        "random": wave(61, 1.0) * 0.7,
        "equal": noisy,
        "silent": np.zeros_like(noisy),
        "double": 2 * noisy,
    }
    err_cmd = 0.0
    n_wav = str(write_wav("noisy.wav", noisy))
    for name, clean in pairs.items():
        out = tmp_path / f"{name}.mmnt"
        code = cli.main(["target", "--clean", str(write_wav(f"{name}.wav", clean)), "--noisy", n_wav, "--out", str(out)])
        assert code == 0
        t = weights.load(out)
        want = oracles.mel_prm(t["clean_power"], t["noisy_power"])
        err_cmd = max(err_cmd, float(np.max(np.abs(t["mask"] - want))))
        if name in ("equal", "double"):
            err_cmd = max(err_cmd, float(np.max(np.abs(t["mask"] - 1.0))))
        if name == "silent":
            err_cmd = max(err_cmd, float(np.max(np.abs(t["mask"]))))
    elapsed = time.perf_counter() - t0
    note(request, f"function err {err_fn:.1e}, command err {err_cmd:.1e}, {elapsed:.1f}s")
    assert err_fn <= 1e-6 and err_cmd <= 1e-6
    assert elapsed < 10.0


@pytest.mark.criterion(7, "80-band filterbank: non-negative, triangular, interior partition of unity")
def test_filterbank_structure(tmp_path, request):
    t0 = time.perf_counter()
    out = tmp_path / "fb.csv"
    assert cli.main(["dump-filterbank", "--out", str(out)]) == 0
    from_csv = cli.read_csv_matrix(out)
    fb = dsp.build_mel_filterbank(C.StftConfig(), 80)
    want, edges = oracles.htk_triangles(80, 512, 16000, 0.0, 8000.0)
    freqs = np.arange(257) * 16000 / 512
    worst = 0.0
    for W in (fb.weights, from_csv):
        assert W.shape == (80, 257) and np.all(W >= 0)
        np.testing.assert_allclose(W, want, atol=1e-6)
        for row in W:
            nz = np.flatnonzero(row)
            d = np.diff(row[nz[0] : nz[-1] + 1])
            peak = int(np.argmax(row[nz[0] : nz[-1] + 1]))
            assert np.all(d[:peak] >= 0) and np.all(d[peak:] <= 0)  # rises then falls
        interior = (freqs >= edges[1]) & (freqs <= edges[-2])
        worst = max(worst, float(np.max(np.abs(W[:, interior].sum(axis=0) - 1.0))))
    elapsed = time.perf_counter() - t0
    note(request, f"max partition error {worst:.1e}, {elapsed:.2f}s")
    assert worst <= 1e-6
    assert elapsed < 1.0


@pytest.mark.criterion(8, "10^6 mask values from random backbones all within [0, 1]")
def test_mask_range(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    total = violations = 0
    while total < 1_000_000:
        bands = int(rng.integers(8, 81))
        cfg = C.mel_config(
            n_mels=max(bands, 20),
            bb__hidden=tuple(int(v) for v in rng.integers(2, 17, size=4)),
            bb__dims=tuple(int(v) for v in rng.integers(2, 17, size=4)),
        )
        w = weights.random_init(cfg, int(rng.integers(2**31)))
        scale = float(10.0 ** rng.uniform(-3, 4))
        w = {k: v * np.float32(scale) for k, v in w.items() if k.startswith("bb.")}
        bb = Backbone(cfg, w)
        T = int(rng.integers(20, 200))
        in_scale = float(10.0 ** rng.uniform(-3, 4))
        e = (in_scale * rng.standard_normal((T, cfg.n_bands, cfg.feature_dim))).astype(np.float32)
        sup = (in_scale * rng.standard_normal((T, cfg.n_bands))).astype(np.float32)
        mask, _ = bb.forward(e, sup)
        violations += int(np.count_nonzero(~((mask >= 0) & (mask <= 1))))
        total += mask.size
    elapsed = time.perf_counter() - t0
    note(request, f"{total} values, {violations} outside [0, 1], {elapsed:.0f}s")
    assert violations == 0
    assert elapsed < 60.0


@pytest.mark.criterion(9, "kernels match loop oracles within 1e-5 on 1000 cases each")
def test_kernel_oracles(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    f32 = lambda *s: rng.standard_normal(s).astype(np.float32)  # noqa: E731
    worst = dict(linear=0.0, layer_norm=0.0, conv1d=0.0, lstm=0.0)
    for _ in range(1000):
        x = f32(int(rng.integers(1, 5)), int(rng.integers(1, 9)))
        W = f32(int(rng.integers(1, 9)), x.shape[1])
        b = f32(W.shape[0])
        worst["linear"] = max(worst["linear"], oracles.rel_err(kernels.linear(x, W, b), oracles.linear(x, W, b)))

        d = int(rng.integers(2, 10))
        x, g, beta = f32(int(rng.integers(1, 5)), d) * 3 + 1, f32(d), f32(d)
        got = kernels.layer_norm(x, g, beta)
        worst["layer_norm"] = max(
            worst["layer_norm"], oracles.rel_err(got, oracles.layer_norm(x, g, beta, kernels.LN_EPS))
        )

        k, mode = int(rng.integers(1, 7)), (kernels.SAME, kernels.CAUSAL)[int(rng.integers(2))]
        x, ker = f32(int(rng.integers(1, 4)), int(rng.integers(1, 9)), 3), f32(2, 3, k)
        bias = f32(2)
        worst["conv1d"] = max(
            worst["conv1d"], oracles.rel_err(kernels.conv1d(x, ker, bias, mode=mode), oracles.conv1d(x, ker, bias, mode))
        )

        n_in, hid, B, L = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 12)), int(rng.integers(1, 5))
        p = kernels.LSTMParams(0.5 * f32(4 * hid, n_in), 0.5 * f32(4 * hid, hid), f32(4 * hid))
        x, h0, c0 = f32(L, B, n_in), f32(B, hid), f32(B, hid)
        y, (h, c) = kernels.lstm_seq(x, p, state=(h0, c0))
        wy, wh, wc = oracles.lstm(x, p.Wx, p.Wh, p.b, h0, c0)
        worst["lstm"] = max(worst["lstm"], oracles.rel_err(y, wy), oracles.rel_err(h, wh), oracles.rel_err(c, wc))
    elapsed = time.perf_counter() - t0
    note(request, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.0f}s")
    assert all(v <= 1e-5 for v in worst.values())
    assert elapsed < 60.0


@pytest.mark.slow
@pytest.mark.criterion(10, "single-core real-time factor below 1.0 (Mel, 30 s)")
def test_real_time_factor(capsys, request):
    code = cli.main(["bench", "--seconds", "30"])
    out = capsys.readouterr().out
    match = re.search(r"^RTF ([\d.]+)$", out, re.M)
    assert code == 0 and match
    rtf = float(match.group(1))
    note(request, f"RTF {rtf:.3f}")
    assert rtf < 1.0


@pytest.mark.criterion(11, "five ablation variants run causally with ordered MACs")
def test_ablation_variants(request):
    t0 = time.perf_counter()
    macs = {}
    rng = np.random.default_rng(11)
    for v in C.VARIANTS:
        cfg = C.variant_config(v)
        engine = Engine(cfg, weights.random_init(cfg, 3))
        x = wave(300, 0.5)
        base = engine.offline(x)
        T = base.mask.shape[0]
        for t in rng.integers(0, T - 1, size=3):
            y = x.copy()
            y[t * HOP + FFT :] = rng.standard_normal(y[t * HOP + FFT :].shape)
            got = engine.offline(y)
            assert np.array_equal(got.mask[: t + 1], base.mask[: t + 1]), (v, t)
            assert np.array_equal(got.logmel[: t + 1], base.logmel[: t + 1]), (v, t)
            assert not np.array_equal(got.mask[t + 1], base.mask[t + 1]), (v, t)
        macs[v] = ledger.count(cfg).macs
    m = [macs[v] for v in ("joint-handcrafted", "joint-fcb", "joint-fcb-tsb", "separate-fcb-tsb")]
    elapsed = time.perf_counter() - t0
    note(request, " < ".join(f"{x / 1e6:.1f}" for x in m) + f" MMAC/frame, {elapsed:.0f}s")
    assert m[0] < m[1] <= m[2] <= m[3]
    assert elapsed < 60.0


@pytest.mark.criterion(12, "archive round trip and reference fixture")
def test_archive_format(tmp_path, request):
    t0 = time.perf_counter()
    w = weights.random_init(C.mel_config(), 12)
    path = tmp_path / "w.mmnt"
    weights.save(w, path)
    back = weights.load(path)
    exact = list(back) == list(w) and all(back[k].tobytes() == w[k].tobytes() for k in w)
    fixture = bytes.fromhex(
        "4d4d4e54" "01000000" "02000000"
        "01000000" "61" "01000000" "02000000" "00000000" "0000803f" "000000c0"
        "02000000" "6263" "02000000" "01000000" "01000000" "00000000" "0000003f"
    )
    t = weights.from_bytes(fixture)
    ok_fixture = (
        list(t) == ["a", "bc"]
        and t["a"].shape == (2,)
        and t["a"].tolist() == [1.0, -2.0]
        and t["bc"].shape == (1, 1)
        and t["bc"].tolist() == [[0.5]]
        and weights.to_bytes(t) == fixture
    )
    elapsed = time.perf_counter() - t0
    note(request, f"{len(w)} tensors round-trip {'exact' if exact else 'DIFFER'}, fixture {'ok' if ok_fixture else 'BAD'}")
    assert exact and ok_fixture
    assert elapsed < 1.0
