"""IDX image files, binarization and synthetic linear-Gaussian datasets."""

from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import serialization
from .models import LinearGaussianModel

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
# anything larger than this many pixels is treated as a corrupt header
MAX_IDX_ELEMENTS = 1 << 36


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(IdxFormatError):
    pass


class TruncatedPayloadError(IdxFormatError):
    pass


class DimensionOverflowError(IdxFormatError):
    pass


@dataclass(frozen=True)
class ImageDataset:
    pixels: np.ndarray  # (n, rows * cols) in [0, 1]
    rows: int
    cols: int
    binarized: bool = False

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[1] != self.rows * self.cols:
            raise ValueError("pixel array does not match image dimensions")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.pixels.shape[0]

    def subset(self, start: int, stop: int) -> "ImageDataset":
        return replace(self, pixels=self.pixels[start:stop])


def parse_idx_images(data: bytes) -> ImageDataset:
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError, zlib.error) as exc:
            raise IdxFormatError(f"corrupt gzip stream: {exc}", 0) from None
    if len(data) < 4:
        raise TruncatedPayloadError("missing magic number", len(data))
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_LABEL_MAGIC:
        raise BadMagicError("not an image file: found IDX label magic 2049", 0)
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(f"not an image file: magic {magic:#010x}", 0)
    if len(data) < 16:
        raise TruncatedPayloadError("truncated header", len(data))
    n, rows, cols = struct.unpack(">III", data[4:16])
    total = n * rows * cols
    if total > MAX_IDX_ELEMENTS:
        raise DimensionOverflowError(f"header declares {n}x{rows}x{cols} pixels", 4)
    payload = len(data) - 16
    if payload < total:
        raise TruncatedPayloadError(f"payload has {payload} of {total} bytes", len(data))
    if payload > total:
        raise IdxFormatError(f"{payload - total} trailing bytes after payload", 16 + total)
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    return ImageDataset(pixels.astype(np.float64) / 255.0, rows, cols)


def load_idx_images(path) -> ImageDataset:
    """Read a (possibly gzipped) big-endian IDX3 image file, scaling bytes to [0, 1]."""
    return parse_idx_images(Path(path).read_bytes())


def idx_image_bytes(images: np.ndarray) -> bytes:
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError("expected an (n, rows, cols) array")
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape)
    return header + np.ascontiguousarray(images, dtype=np.uint8).tobytes()


def write_idx_images(path, images: np.ndarray) -> None:
    Path(path).write_bytes(idx_image_bytes(images))


def binarize(ds: ImageDataset, mode: str = "fixed", seed: int = 0) -> ImageDataset:
    """Fixed mode thresholds at >= 0.5; stochastic mode draws Bernoulli(pixel) once."""
    if mode == "fixed":
        pixels = (ds.pixels >= 0.5).astype(np.float64)
    elif mode == "stochastic":
        rng = np.random.default_rng(seed)
        pixels = (rng.random(ds.pixels.shape) < ds.pixels).astype(np.float64)
    else:
        raise ValueError(f"unknown binarization mode {mode!r}")
    return replace(ds, pixels=pixels, binarized=True)


@dataclass
class SyntheticDataset:
    theta_star: np.ndarray
    dim_x: int
    dim_z: int
    x: np.ndarray
    z: np.ndarray
    seed: int

    def model(self) -> LinearGaussianModel:
        return LinearGaussianModel(self.dim_x, self.dim_z, self.theta_star)


def synthesize_linear_gaussian(theta_star: LinearGaussianModel, n: int, seed: int) -> SyntheticDataset:
    """Ancestral draws z ~ N(0, I), x ~ N(W z + b, sigma_x^2 I); latents retained."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x, z = theta_star.sample(n, rng)
    return SyntheticDataset(theta_star.theta.copy(), theta_star.dim_x, theta_star.dim_z, x, z, seed)


def save_dataset(ds: SyntheticDataset, path) -> None:
    serialization.save(path, serialization.DATASET_MAGIC, {
        "theta_star": ds.theta_star,
        "dims": np.array([ds.dim_x, ds.dim_z, ds.seed], dtype=float),
        "x": ds.x,
        "z": ds.z,
    })


def load_dataset(path) -> SyntheticDataset:
    t = serialization.load(path, serialization.DATASET_MAGIC)
    dim_x, dim_z, seed = (int(v) for v in t["dims"])
    return SyntheticDataset(t["theta_star"], dim_x, dim_z,
                            t["x"].reshape(-1, dim_x), t["z"].reshape(-1, dim_z), seed)
