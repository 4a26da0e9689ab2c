"""PSNR and SSIM, computed per frame and averaged."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .core import VideoCube

PSNR_CAP = 99.0
WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class FrameScores:
    per_frame: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_frame))


@dataclass(frozen=True)
class QualityReport:
    psnr: FrameScores
    ssim: FrameScores

    @property
    def psnr_db(self) -> float:
        return self.psnr.mean

    @property
    def ssim_mean(self) -> float:
        return self.ssim.mean


def _pair(reference: VideoCube, test: VideoCube):
    if reference.shape != test.shape:
        raise ValueError(f"dims differ: {reference.shape} vs {test.shape}")
    return np.clip(reference.data, 0.0, 1.0), np.clip(test.data, 0.0, 1.0)


def psnr(reference: VideoCube, test: VideoCube, peak: float = 1.0) -> FrameScores:
    if not peak > 0:
        raise ValueError("peak must be positive")
    ref, tst = _pair(reference, test)
    scores = []
    for m in range(ref.shape[2]):
        mse = float(np.mean((ref[:, :, m] - tst[:, :, m]) ** 2))
        scores.append(PSNR_CAP if mse == 0 else min(10 * np.log10(peak**2 / mse), PSNR_CAP))
    return FrameScores(scores)


def gaussian_window(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_frame(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    if min(a.shape) < WINDOW:
        raise ValueError(f"frame {a.shape} is smaller than the {WINDOW}x{WINDOW} window")
    w = gaussian_window()

    def filt(img):
        return convolve2d(img, w, mode="valid")

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(reference: VideoCube, test: VideoCube) -> FrameScores:
    ref, tst = _pair(reference, test)
    return FrameScores([ssim_frame(ref[:, :, m], tst[:, :, m]) for m in range(ref.shape[2])])


def quality(reference: VideoCube, test: VideoCube) -> QualityReport:
    return QualityReport(psnr(reference, test), ssim(reference, test))
