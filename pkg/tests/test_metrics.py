import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from onehot_sci.core import VideoCube
from onehot_sci.metrics import PSNR_CAP, psnr, quality, ssim
from oracles import ssim_reference


def _pair(seed, shape=(32, 32, 2), noise=0.1):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0.1, 0.9, size=shape)
    test = np.clip(ref + rng.normal(scale=noise, size=shape), 0, 1)
    return VideoCube(ref), VideoCube(test)


def test_psnr_20db_exact():
    ref = VideoCube(np.full((4, 4, 2), 0.5))
    test = VideoCube(np.full((4, 4, 2), 0.4))
    scores = psnr(ref, test)
    assert all(abs(v - 20.0) <= 1e-9 for v in scores.per_frame)
    assert abs(scores.mean - 20.0) <= 1e-9


def test_psnr_identical_sentinel():
    ref, _ = _pair(0)
    assert psnr(ref, ref).per_frame == [PSNR_CAP, PSNR_CAP]


def test_psnr_brute_force():
    ref, test = _pair(1, (7, 9, 3))
    for m, got in enumerate(psnr(ref, test).per_frame):
        sq = 0.0
        for h in range(7):
            for w in range(9):
                sq += (ref.data[h, w, m] - test.data[h, w, m]) ** 2
        assert abs(got - 10 * math.log10(1.0 / (sq / 63))) <= 1e-9


def test_psnr_peak_and_errors():
    ref = VideoCube(np.full((2, 2, 1), 0.5))
    test = VideoCube(np.full((2, 2, 1), 0.4))
    assert psnr(ref, test, peak=2.0).mean == pytest.approx(20 + 20 * math.log10(2))
    with pytest.raises(ValueError):
        psnr(ref, test, peak=0)
    with pytest.raises(ValueError):
        psnr(ref, VideoCube.zeros(2, 2, 2))


def test_psnr_clamps():
    ref = VideoCube(np.full((2, 2, 1), 1.0))
    over = VideoCube(np.full((2, 2, 1), 3.0))
    assert psnr(ref, over).mean == PSNR_CAP


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(0)
    ref = rng.uniform(0.3, 0.7, size=(32, 32, 2))
    z = rng.normal(size=ref.shape)
    values = [psnr(VideoCube(ref), VideoCube(ref + std * z)).mean for std in (0.005, 0.01, 0.02, 0.05, 0.1)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_symmetry():
    ref, test = _pair(2)
    assert psnr(ref, test).per_frame == psnr(test, ref).per_frame
    assert ssim(ref, test).per_frame == pytest.approx(ssim(test, ref).per_frame, abs=1e-15)


def test_ssim_identity_and_constant():
    ref, _ = _pair(3)
    assert ssim(ref, ref).per_frame == [1.0, 1.0]
    c = VideoCube(np.full((16, 16, 1), 0.5))
    assert ssim(c, c).mean == 1.0


def test_ssim_matches_reference():
    ref, test = _pair(4, (32, 32, 1))
    ours = ssim(ref, test).per_frame[0]
    assert abs(ours - ssim_reference(ref.data[:, :, 0], test.data[:, :, 0])) <= 1e-6


def test_ssim_small_frame_rejected():
    with pytest.raises(ValueError):
        ssim(VideoCube.zeros(10, 20, 1), VideoCube.zeros(10, 20, 1))


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.float64, (12, 12, 1), elements=st.floats(-1, 2)),
    arrays(np.float64, (12, 12, 1), elements=st.floats(-1, 2)),
)
def test_ssim_range(a, b):
    value = ssim(VideoCube(a), VideoCube(b)).mean
    assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12


def test_quality_report():
    ref, test = _pair(5)
    q = quality(ref, test)
    assert q.psnr_db == pytest.approx(np.mean(q.psnr.per_frame))
    assert q.ssim_mean == pytest.approx(np.mean(q.ssim.per_frame))
