"""Dense 2-D/3-D array helpers and the numeric kernels shared by every stage.

Grids are plain float64 ndarrays: a "grid" is 2-D (h, w), a "volume" is 3-D
(channels, h, w), a "vec" is 1-D. All kernels are deterministic, row-major,
double precision.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from scipy import ndimage

from .errors import NumericError


def as_grid(values) -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    g = np.asarray(values, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise NumericError(f"grid must be 2-D non-empty, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("grid contains non-finite values")
    return g


def as_volume(values) -> np.ndarray:
    """Validate and return a finite 3-D float64 array (channels, h, w)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or v.shape[0] < 1:
        raise NumericError(f"volume must be 3-D with >=1 channel, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError("volume contains non-finite values")
    return v


def global_average_pool(vol: np.ndarray) -> np.ndarray:
    """Mean over the spatial extent of each channel."""
    vol = as_volume(vol)
    return vol.mean(axis=(1, 2))


def dot(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise NumericError(f"dot dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; 0 if either operand has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise NumericError(f"cosine dimension mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """2-D Gaussian truncated at radius ceil(3*sigma), renormalized to sum 1."""
    if sigma <= 0:
        raise NumericError(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    k2 = np.outer(k1, k1)
    return k2 / k2.sum()


def gaussian_smooth(g: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian convolution that conserves total mass at the boundary.

    Each source cell's truncated kernel is renormalized over the in-bounds
    cells it reaches, so the output sum equals the input sum to fp precision.
    """
    g = as_grid(g)
    kernel = gaussian_kernel(sigma)
    in_bounds_mass = ndimage.convolve(
        np.ones_like(g), kernel, mode="constant", cval=0.0
    )
    return ndimage.convolve(g / in_bounds_mass, kernel, mode="constant", cval=0.0)


def minmax_normalize(g: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant grid maps to all zeros."""
    g = as_grid(g)
    lo = g.min()
    hi = g.max()
    if hi == lo:
        return np.zeros_like(g)
    return (g - lo) / (hi - lo)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 stream; identical seed gives identical output."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def named_stream(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Independent substream derived from a root seed and a stable name.

    Components can be re-run individually and still see the same draws: the
    stream depends only on (root_seed, name, indices), not on call order.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:4], "big")
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=(key, *indices))
    return np.random.Generator(np.random.PCG64(seq))
