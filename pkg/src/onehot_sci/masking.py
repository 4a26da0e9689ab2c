"""One-hot and random binary modulation masks."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core
from .rng import uniform01


class MaskKind(str, enum.Enum):
    ONE_HOT = "one_hot"
    RANDOM_BINARY = "random_binary"


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary H x W x B modulation pattern, temporal axis innermost."""

    bits: np.ndarray
    kind: MaskKind = MaskKind.RANDOM_BINARY

    def __post_init__(self):
        bits = np.array(self.bits, copy=True)
        if bits.ndim != 3 or any(n < 1 for n in bits.shape):
            raise ValueError(f"mask must be a non-empty 3-D array, got {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "kind", MaskKind(self.kind))
        if self.kind is MaskKind.ONE_HOT and not _temporal_sum_is_one(bits):
            raise ValueError("bits do not form a one-hot mask")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.bits.shape

    @property
    def frames(self) -> int:
        return self.bits.shape[2]

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.bits, other.bits)

    __hash__ = None


def _temporal_sum_is_one(bits: np.ndarray) -> bool:
    return bool(np.all(bits.sum(axis=2, dtype=np.int64) == 1))


def _check_dims(H: int, W: int, B: int) -> None:
    for name, n in (("H", H), ("W", W), ("B", B)):
        if int(n) != n or n < 1:
            raise ValueError(f"{name} must be a positive integer, got {n}")


def one_hot_indices(H: int, W: int, B: int, seed: int) -> np.ndarray:
    """0-based active frame index per pixel.

    Draws u ~ Uniform[1, B+1) per pixel and activates frame floor(u) (1-based);
    the u = B+1 endpoint is clamped to B.
    """
    _check_dims(H, W, B)
    h, w = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    u = 1.0 + B * uniform01(seed, h, w, 0)
    m = np.clip(np.floor(u).astype(np.int64), 1, B)
    return m - 1


def gen_one_hot_mask(H: int, W: int, B: int, seed: int) -> Mask:
    idx = one_hot_indices(H, W, B, seed)
    bits = (idx[:, :, None] == np.arange(B)[None, None, :]).astype(np.uint8)
    return Mask(bits, MaskKind.ONE_HOT)


def gen_random_binary_mask(H: int, W: int, B: int, p: float, seed: int) -> Mask:
    _check_dims(H, W, B)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    h, w, m = np.meshgrid(np.arange(H), np.arange(W), np.arange(B), indexing="ij")
    # Counter word 1 keeps this stream disjoint from the one-hot draw.
    bits = (uniform01(seed, h, w, m + 1) < p).astype(np.uint8)
    return Mask(bits, MaskKind.RANDOM_BINARY)


def complement_mask(mask: Mask) -> Mask:
    return Mask(1 - mask.bits, MaskKind.RANDOM_BINARY)


def validate_one_hot(mask: Mask) -> bool:
    return _temporal_sum_is_one(mask.bits)


def _meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def save_mask(mask: Mask, path, **extra) -> None:
    core.save_cube(core.VideoCube(mask.as_float()), path)
    lines = [f"kind={mask.kind.value}"] + [f"{k}={v}" for k, v in extra.items()]
    _meta_path(path).write_text("\n".join(lines) + "\n")


def load_mask(path) -> Mask:
    bits = core.load_cube(path).data
    kind = MaskKind.RANDOM_BINARY
    meta = _meta_path(path)
    if meta.exists():
        fields = dict(
            line.split("=", 1) for line in meta.read_text().splitlines() if "=" in line
        )
        kind = MaskKind(fields.get("kind", kind.value))
    elif _temporal_sum_is_one(bits.astype(np.uint8)):
        kind = MaskKind.ONE_HOT
    return Mask(bits, kind)
