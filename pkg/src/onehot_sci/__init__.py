"""Snapshot compressive imaging with one-hot temporal masks and diffusion-SDE reconstruction."""

from .core import Measurement, NoiseModel, VideoCube, load_cube, save_cube
from .masking import Mask, MaskKind, gen_one_hot_mask, gen_random_binary_mask
from .sde import Scheduler

__version__ = "0.1.0"

__all__ = [
    "Mask",
    "MaskKind",
    "Measurement",
    "NoiseModel",
    "Scheduler",
    "VideoCube",
    "gen_one_hot_mask",
    "gen_random_binary_mask",
    "load_cube",
    "save_cube",
]
