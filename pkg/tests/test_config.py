import pytest

from melstream import config as C
from melstream.kernels import ConfigError


def test_dump_parse_round_trip():
    for cfg in (C.mel_config(), C.linear_config(), C.variant_config("joint-fcb", ref_channel=2)):
        text = C.dump_config(cfg)
        assert C.parse_config_text(text) == cfg
        assert C.fingerprint(C.parse_config_text(text)) == C.fingerprint(cfg)


def test_ref_channel_is_one_based_in_text():
    cfg = C.parse_config_text("ref_channel = 1\n")
    assert cfg.ref_channel == 0
    assert "ref_channel = 1" in C.dump_config(cfg)


def test_parse_errors():
    with pytest.raises(ConfigError, match="unknown"):
        C.parse_config_text("bb.nope = 3")
    with pytest.raises(ConfigError, match="line 2"):
        C.parse_config_text("# comment\nnonsense")
    with pytest.raises(ConfigError):
        C.parse_config_text("n_mels = many")
    with pytest.raises(ConfigError):
        C.parse_config_text("ref_channel = 9")


def test_overrides_and_variants():
    cfg = C.mel_config(n_mels=40, s2m__dim=16, bb__hidden=(4, 4, 4, 4))
    assert (cfg.n_mels, cfg.s2m.dim, cfg.backbone.hidden) == (40, 16, (4, 4, 4, 4))
    assert C.linear_config().n_bands == 257
    for v in C.VARIANTS:
        assert C.variant_config(v).s2m.variant == v
    with pytest.raises(ConfigError):
        C.variant_config("nonexistent")


def test_fingerprint_changes_with_config():
    assert C.fingerprint(C.mel_config()) != C.fingerprint(C.mel_config(n_mels=64))
    assert len(C.fingerprint(C.mel_config())) == 16
