"""Pipeline configuration, presets and the ``key = value`` run-config format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .kernels import ConfigError

VARIANTS = (
    "separate-fcb-tsb",
    "joint-fcb-tsb",
    "joint-fcb",
    "joint-handcrafted",
    "joint-trainmel",
)
COMM_MODES = ("bidirectional", "mag-only")
FRONTENDS = ("mel", "linear")


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 128
    sample_rate: int = 16000

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2:
            raise ConfigError("fft_size must be a positive even number")
        if not 0 < self.hop <= self.fft_size:
            raise ConfigError("hop must satisfy 0 < hop <= fft_size")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")

    @property
    def n_freqs(self):
        return self.fft_size // 2 + 1

    @property
    def frames_per_second(self):
        return self.sample_rate / self.hop

    def n_frames(self, n_samples):
        if n_samples < self.fft_size:
            return 0
        return (n_samples - self.fft_size) // self.hop + 1


@dataclass(frozen=True)
class Stft2MelConfig:
    dim: int = 64
    blocks: int = 3
    f_kernel: int = 3
    t_kernel: int = 6
    t_past_pad: int = 5
    variant: str = "separate-fcb-tsb"
    comm: str = "bidirectional"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.comm not in COMM_MODES:
            raise ConfigError(f"unknown comm mode {self.comm!r}")
        if self.t_past_pad != self.t_kernel - 1:
            raise ConfigError("t_past_pad must equal t_kernel - 1")
        if self.dim < 1 or self.blocks < 0 or self.f_kernel < 1 or self.t_kernel < 1:
            raise ConfigError("dim, f_kernel, t_kernel must be >= 1 and blocks >= 0")

    @property
    def separate(self):
        return self.variant.startswith("separate")

    @property
    def has_fcb(self):
        return "fcb" in self.variant

    @property
    def has_tsb(self):
        return self.variant.endswith("tsb")


@dataclass(frozen=True)
class BackboneConfig:
    """Hidden sizes per module (full-band spatial, narrow-band spatial,
    sub-band spectral, full-band spectral) and their output widths.

    The defaults give about 1.73 M parameters for the linear-frequency
    model and 1.92 M with the Mel compression in front; most of them sit
    in the two time-axis LSTMs, which run batched over bands.
    """

    hidden: tuple = (64, 320, 480, 64)
    dims: tuple = (64, 64, 64, 64)
    n1: int = 3
    n2: int = 3
    context: int = 1
    identity: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "identity", tuple(sorted(int(v) for v in self.identity)))
        if len(self.hidden) != 4 or len(self.dims) != 4:
            raise ConfigError("backbone needs exactly four hidden sizes and four dims")
        if min(self.hidden) < 1 or min(self.dims) < 1:
            raise ConfigError("backbone sizes must be positive")
        if self.n1 < 0 or self.n2 < 0 or self.context < 1:
            raise ConfigError("n1, n2 must be >= 0 and context >= 1")
        if any(m not in (1, 2, 3, 4) for m in self.identity):
            raise ConfigError("identity modules are numbered 1..4")


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    n_channels: int = 6
    ref_channel: int = 4  # zero-based; the fifth microphone
    frontend: str = "mel"
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    s2m: Stft2MelConfig = field(default_factory=Stft2MelConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if self.frontend not in FRONTENDS:
            raise ConfigError(f"unknown frontend {self.frontend!r}")
        if self.n_channels < 1:
            raise ConfigError("n_channels must be >= 1")
        if not 0 <= self.ref_channel < self.n_channels:
            raise ConfigError(
                f"reference channel {self.ref_channel + 1} outside 1..{self.n_channels}"
            )
        if self.fmax > self.stft.sample_rate / 2 or self.fmin < 0 or self.fmin >= self.fmax:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")
        if 1 in self.backbone.identity and self.feature_dim != self.backbone.dims[0]:
            raise ConfigError("module 1 can only be bypassed when its input and output widths match")
        for m in (2, 3, 4):
            if m in self.backbone.identity and self.backbone.dims[m - 2] != self.backbone.dims[m - 1]:
                raise ConfigError(f"module {m} can only be bypassed when its input and output widths match")

    @property
    def n_bands(self):
        return self.n_mels if self.frontend == "mel" else self.stft.n_freqs

    @property
    def feature_dim(self):
        """Per-band feature width entering the backbone."""
        return self.s2m.dim if self.frontend == "mel" else 2 * self.n_channels


def mel_config(**overrides):
    return _with_overrides(PipelineConfig(), overrides)


def linear_config(**overrides):
    return _with_overrides(PipelineConfig(frontend="linear"), overrides)


def variant_config(variant, **overrides):
    cfg = PipelineConfig(s2m=Stft2MelConfig(variant=variant))
    return _with_overrides(cfg, overrides)


def _with_overrides(cfg, overrides):
    if not overrides:
        return cfg
    flat = to_flat(cfg)
    for key, value in overrides.items():
        flat[key.replace("__", ".")] = value
    return from_flat(flat)


# --------------------------------------------------------------------------
# flat key/value view

_SECTIONS = {"stft": StftConfig, "s2m": Stft2MelConfig, "bb": BackboneConfig}
_SECTION_ATTR = {"stft": "stft", "s2m": "s2m", "bb": "backbone"}


def _fmt(value):
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(cfg):
    """Flatten to ``{"stft.hop": 128, "bb.hidden": (..), "ref_channel": 5, ...}``.

    ``ref_channel`` is one-based in the flat view.
    """
    flat = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            prefix = next(k for k, v in _SECTION_ATTR.items() if v == f.name)
            for sub in fields(value):
                flat[f"{prefix}.{sub.name}"] = getattr(value, sub.name)
        elif f.name == "ref_channel":
            flat[f.name] = value + 1
        else:
            flat[f.name] = value
    return flat


def _coerce(kind, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if kind is tuple:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _field_kinds(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def from_flat(flat):
    """Inverse of :func:`to_flat`; unknown keys raise :class:`ConfigError`."""
    top_kinds = {
        "n_channels": int,
        "ref_channel": int,
        "frontend": str,
        "n_mels": int,
        "fmin": float,
        "fmax": float,
    }
    sections = {name: {} for name in _SECTIONS}
    top = {}
    for key, raw in flat.items():
        if "." in key:
            section, name = key.split(".", 1)
            cls = _SECTIONS.get(section)
            if cls is None or name not in _field_kinds(cls):
                raise ConfigError(f"unknown config key {key!r}")
            try:
                sections[section][name] = _coerce(_field_kinds(cls)[name], raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        else:
            if key not in top_kinds:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                top[key] = _coerce(top_kinds[key], raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    if "ref_channel" in top:
        top["ref_channel"] -= 1
    try:
        return PipelineConfig(
            stft=StftConfig(**sections["stft"]),
            s2m=Stft2MelConfig(**sections["s2m"]),
            backbone=BackboneConfig(**sections["bb"]),
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text, base=None):
    """Parse ``key = value`` lines (``#`` starts a comment) on top of ``base``."""
    flat = to_flat(base or PipelineConfig())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in flat:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        flat[key] = value
    return from_flat(flat)


def load_config(path, base=None):
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)


def dump_config(cfg):
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(to_flat(cfg).items()))


def fingerprint(cfg):
    """Short stable hash of the effective configuration."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()[:16]


__all__ = [
    "BackboneConfig",
    "PipelineConfig",
    "Stft2MelConfig",
    "StftConfig",
    "VARIANTS",
    "dump_config",
    "fingerprint",
    "from_flat",
    "linear_config",
    "load_config",
    "mel_config",
    "parse_config_text",
    "replace",
    "to_flat",
    "variant_config",
]
