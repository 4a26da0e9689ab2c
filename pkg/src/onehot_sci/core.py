"""Data containers and the OHSC1 binary cube format.

Cubes are stored as ``(H, W, B)`` float64 arrays, temporal axis innermost, so
element ``(h, w, m)`` sits at flat offset ``((h * W) + w) * B + m``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"OHSC1"
VERSION = 1
HEADER_SIZE = 24
_HEADER = struct.Struct("<5sB2sIII4s")


class FormatError(ValueError):
    """Raised when a file does not follow the OHSC1 layout."""


def _frozen(array, ndim: int, name: str) -> np.ndarray:
    data = np.array(array, dtype=np.float64, copy=True)
    if data.ndim != ndim:
        raise ValueError(f"{name} expects a {ndim}-D array, got shape {data.shape}")
    if any(n < 1 for n in data.shape):
        raise ValueError(f"{name} dimensions must be positive, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains non-finite values")
    data.setflags(write=False)
    return data


@dataclass(frozen=True, eq=False)
class VideoCube:
    """H x W x B grayscale video. Values are nominally in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 3, "VideoCube"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def frame(self, m: int) -> np.ndarray:
        return self.data[:, :, m]

    @classmethod
    def zeros(cls, height: int, width: int, frames: int) -> "VideoCube":
        return cls(np.zeros((height, width, frames)))

    @classmethod
    def from_flat(cls, values, height: int, width: int, frames: int) -> "VideoCube":
        values = np.asarray(values, dtype=np.float64)
        if values.size != height * width * frames:
            raise ValueError(
                f"expected {height * width * frames} values, got {values.size}"
            )
        return cls(values.reshape(height, width, frames))

    def __eq__(self, other):
        if not isinstance(other, VideoCube):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Measurement:
    """H x W compressed snapshot."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 2, "Measurement"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Measurement):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian measurement noise."""

    std: float = 0.0

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")


def _write(path, array3: np.ndarray) -> None:
    h, w, b = array3.shape
    header = _HEADER.pack(MAGIC, VERSION, b"\0\0", h, w, b, b"\0\0\0\0")
    payload = np.ascontiguousarray(array3, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _read(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, reserved, h, w, b, pad = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    for name, value in (("height", h), ("width", w), ("frames", b)):
        if value == 0:
            raise FormatError(f"{path}: {name} is zero")
    expected = h * w * b * 4
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} bytes, expected {expected} "
            f"({h}x{w}x{b} floats)"
        )
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w, b)


def save_cube(cube: VideoCube, path) -> None:
    _write(path, cube.data)


def load_cube(path) -> VideoCube:
    return VideoCube(_read(path))


def save_measurement(y: Measurement, path) -> None:
    _write(path, y.data[:, :, None])


def load_measurement(path) -> Measurement:
    data = _read(path)
    if data.shape[2] != 1:
        raise FormatError(f"{path}: measurement must have B=1, got {data.shape[2]}")
    return Measurement(data[:, :, 0])


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and scale to [0, 255] rounding half up."""
    return np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, frame: np.ndarray) -> None:
    img = to_uint8(frame)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM and return values scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    img = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if img.size != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return img.reshape(h, w).astype(np.float64) / maxval


def export_frames(cube: VideoCube, directory) -> list[Path]:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for m in range(cube.frames):
        path = directory / f"frame_{m:03d}.pgm"
        write_pgm(path, cube.frame(m))
        paths.append(path)
    return paths


def load_frames(directory, frames: int | None = None) -> VideoCube:
    """Stack the PGM/PNG frames of a directory (sorted by name) into a cube."""
    directory = Path(directory)
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".png")
    )
    if frames is not None:
        files = files[:frames]
    if not files:
        raise FileNotFoundError(f"no PGM/PNG frames in {directory}")
    stack = []
    for p in files:
        if p.suffix.lower() == ".pgm":
            stack.append(read_pgm(p))
        else:
            from PIL import Image

            stack.append(np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0)
    return VideoCube(np.stack(stack, axis=-1))
