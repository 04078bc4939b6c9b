"""Image-quality and compression-rate reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ssim as _ssim


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    raw_bytes: int
    compressed_bytes: int
    compression_ratio: float

    def to_dict(self) -> dict:
        return {
            "psnr": "inf" if math.isinf(self.psnr) else self.psnr,
            "ssim": self.ssim,
            "raw_bytes": self.raw_bytes,
            "compressed_bytes": self.compressed_bytes,
            "compression_ratio": self.compression_ratio,
        }


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) at dynamic range 1; +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1)."""
    return _ssim.ssim(a, b)


def size_report(container_bytes: int, original_bytes: int) -> dict:
    """Compression ratio fields from raw and compressed byte counts."""
    if container_bytes <= 0:
        raise ValueError("compressed size must be positive")
    if original_bytes <= 0:
        raise ValueError("raw size must be positive")
    return {
        "raw_bytes": int(original_bytes),
        "compressed_bytes": int(container_bytes),
        "compression_ratio": original_bytes / container_bytes,
    }
