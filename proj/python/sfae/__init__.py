"""Frequency-band gamma enhancement for RAW images."""

from ._sfae import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    IoError,
    ShapeError,
    Trainer,
    band_boundaries,
    band_energy,
    decompose,
    enhance,
    gradcheck,
    image_entropy,
    init_params,
    load_raw,
    safe_pow,
    synthesize,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "IoError",
    "ShapeError",
    "Trainer",
    "band_boundaries",
    "band_energy",
    "decompose",
    "enhance",
    "gradcheck",
    "image_entropy",
    "init_params",
    "load_raw",
    "safe_pow",
    "synthesize",
]
