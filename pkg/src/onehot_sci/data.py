"""Synthetic training videos and simulated training samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Measurement, NoiseModel, VideoCube
from .encoder import encode_dual, masked_init
from .masking import Mask, gen_one_hot_mask


def synthetic_video(H: int, W: int, B: int, seed: int) -> VideoCube:
    """Moving rectangles over a drifting sinusoid grating, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    freq = rng.uniform(0.15, 0.6)
    angle = rng.uniform(0, np.pi)
    speed = rng.uniform(-1.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    base = rng.uniform(0.2, 0.5)
    amp = rng.uniform(0.05, 0.2)
    proj = xx * np.cos(angle) + yy * np.sin(angle)
    video = np.empty((H, W, B))
    for m in range(B):
        video[:, :, m] = base + amp * np.sin(freq * (proj - speed * m) + phase)
    for _ in range(rng.integers(1, 4)):
        h, w = rng.integers(3, max(4, H // 2)), rng.integers(3, max(4, W // 2))
        r0, c0 = rng.uniform(0, H - h), rng.uniform(0, W - w)
        vr, vc = rng.uniform(-2, 2, size=2)
        level = rng.uniform(0.0, 1.0)
        for m in range(B):
            r = int(round(r0 + vr * m)) % H
            c = int(round(c0 + vc * m)) % W
            rows = (np.arange(r, r + h) % H)[:, None]
            cols = (np.arange(c, c + w) % W)[None, :]
            video[rows, cols, m] = level
    return VideoCube(np.clip(video, 0.0, 1.0))


def synthetic_dataset(n: int, H: int = 16, W: int = 16, B: int = 4, seed: int = 0) -> list[VideoCube]:
    return [synthetic_video(H, W, B, seed * 1_000_003 + i) for i in range(n)]


@dataclass(frozen=True)
class TrainingSample:
    """A ground-truth video with its simulated dual-path capture."""

    x0: VideoCube
    mask: Mask
    y: Measurement
    y_c: Measurement
    x1: VideoCube
    x_dst: VideoCube


def simulate_sample(x0: VideoCube, seed: int, noise_std: float) -> TrainingSample:
    H, W, B = x0.shape
    mask = gen_one_hot_mask(H, W, B, seed)
    meas = encode_dual(x0, mask, NoiseModel(noise_std), NoiseModel(noise_std), seed=seed)
    return TrainingSample(
        x0=x0,
        mask=mask,
        y=meas.primary,
        y_c=meas.compensatory,
        x1=masked_init(meas.primary, mask),
        x_dst=VideoCube(x0.data * mask.as_float()),
    )
