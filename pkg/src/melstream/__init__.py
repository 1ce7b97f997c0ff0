"""Causal multichannel speech enhancement in the Mel domain.

numpy/scipy implementation of a streaming pipeline: STFT front end,
learnable STFT-to-Mel compression, a four-module LSTM mask estimator,
an analytic operation ledger and a portable tensor archive.
"""

from .config import (
    BackboneConfig,
    PipelineConfig,
    Stft2MelConfig,
    StftConfig,
    fingerprint,
    linear_config,
    load_config,
    mel_config,
    variant_config,
)
from .engine import Engine, EnhanceResult, StreamState, offline_enhance, open_stream
from .kernels import ConfigError, OpCounter, ShapeError
from .ledger import bench_rtf, compare, count
from .weights import load, random_init, save, validate

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "ConfigError",
    "Engine",
    "EnhanceResult",
    "OpCounter",
    "PipelineConfig",
    "ShapeError",
    "Stft2MelConfig",
    "StftConfig",
    "StreamState",
    "bench_rtf",
    "compare",
    "count",
    "fingerprint",
    "linear_config",
    "load",
    "load_config",
    "mel_config",
    "offline_enhance",
    "open_stream",
    "random_init",
    "save",
    "validate",
    "variant_config",
]
