"""Simulated single- and dual-path snapshot compression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Measurement, NoiseModel, VideoCube
from .masking import Mask, validate_one_hot
from .rng import gaussian_stream

PRIMARY_PATH = 0
COMPENSATORY_PATH = 1


@dataclass(frozen=True)
class DualMeasurement:
    primary: Measurement
    compensatory: Measurement

    def __post_init__(self):
        if self.primary.shape != self.compensatory.shape:
            raise ValueError(
                f"path dims differ: {self.primary.shape} vs {self.compensatory.shape}"
            )


def _check_pair(x: VideoCube, mask: Mask) -> None:
    if x.shape != mask.shape:
        raise ValueError(f"video dims {x.shape} do not match mask dims {mask.shape}")


def quantize(values: np.ndarray, bits: int, full_scale: float) -> np.ndarray:
    """Clip to [0, full_scale] and round to ``2**bits - 1`` levels."""
    levels = 2**bits - 1
    q = np.floor(np.clip(values, 0.0, full_scale) / full_scale * levels + 0.5)
    return q * full_scale / levels


def _snapshot(x, bits, noise: NoiseModel, rng, quantize_bits, full_scale):
    y = np.sum(x * bits, axis=2)
    if noise.std > 0:
        y = y + noise.std * rng.standard_normal(y.shape)
    if quantize_bits:
        y = quantize(y, quantize_bits, full_scale)
    return Measurement(y)


def encode_single(
    x: VideoCube,
    mask: Mask,
    noise: NoiseModel = NoiseModel(),
    seed: int = 0,
    quantize_bits: int | None = None,
    full_scale: float = 1.0,
) -> Measurement:
    """Sum the masked frames onto one detector and add Gaussian read noise.

    The result is unclipped unless ``quantize_bits`` is given, in which case
    the sensor is modelled with that bit depth over ``[0, full_scale]``.
    """
    _check_pair(x, mask)
    rng = gaussian_stream(seed, PRIMARY_PATH)
    return _snapshot(x.data, mask.as_float(), noise, rng, quantize_bits, full_scale)


def encode_dual(
    x: VideoCube,
    mask: Mask,
    noise: NoiseModel = NoiseModel(),
    noise_c: NoiseModel = NoiseModel(),
    seed: int = 0,
    quantize_bits: int | None = None,
    full_scale: float | None = None,
) -> DualMeasurement:
    _check_pair(x, mask)
    bits = mask.as_float()
    primary = _snapshot(
        x.data, bits, noise, gaussian_stream(seed, PRIMARY_PATH), quantize_bits,
        full_scale or 1.0,
    )
    # The compensatory path integrates up to B-1 frames, so its default
    # full scale grows accordingly.
    comp = _snapshot(
        x.data, 1.0 - bits, noise_c, gaussian_stream(seed, COMPENSATORY_PATH),
        quantize_bits, full_scale or float(max(x.frames - 1, 1)),
    )
    return DualMeasurement(primary, comp)


def masked_init(y: Measurement, mask: Mask) -> VideoCube:
    """Zero-filled cube holding each measurement pixel in its active frame."""
    if not validate_one_hot(mask):
        raise ValueError("masked_init requires a one-hot mask")
    if y.shape != mask.shape[:2]:
        raise ValueError(f"measurement dims {y.shape} do not match mask {mask.shape}")
    return VideoCube(y.data[:, :, None] * mask.as_float())


def pixel_histogram(y: Measurement, bins: int) -> list[tuple[float, int]]:
    """Uniform-width histogram of measurement values over [min, max]."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    values = y.data.ravel()
    # numpy widens a zero-width range to [v - 0.5, v + 0.5].
    counts, edges = np.histogram(values, bins=bins, range=(values.min(), values.max()))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return [(float(c), int(n)) for c, n in zip(centers, counts)]
