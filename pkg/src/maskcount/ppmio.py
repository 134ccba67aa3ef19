"""Binary PPM (P6) and PGM (P5) readers and writers, maxval 255.

Images travel as float64 arrays in [0, 1]: volumes (3, h, w) for PPM,
grids (h, w) for PGM. Malformed files raise ParseError naming the field
and byte offset.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError


def _read_token(data: bytes, pos: int, path, field: str) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines between header tokens
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ParseError(path, field, f"unexpected end of header at offset {pos}")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _read_header(data: bytes, path, expected_magic: bytes) -> tuple[int, int, int]:
    magic, pos = _read_token(data, 0, path, "magic")
    if magic != expected_magic:
        raise ParseError(path, "magic", f"expected {expected_magic!r}, got {magic!r}")
    fields = []
    for field in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos, path, field)
        try:
            val = int(tok)
        except ValueError:
            raise ParseError(path, field, f"not an integer: {tok!r} at offset {pos}")
        if val <= 0:
            raise ParseError(path, field, f"must be positive, got {val}")
        fields.append(val)
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(path, "maxval", f"only maxval 255 supported, got {maxval}")
    # exactly one whitespace byte separates the header from pixel data
    pos += 1
    return width, height, pos


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, h, w) float volume in [0, 1] as binary P6."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) volume, got shape {image.shape}")
    _, h, w = image.shape
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 into a (3, h, w) float volume in [0, 1]."""
    data = Path(path).read_bytes()
    width, height, pos = _read_header(data, path, b"P6")
    expected = width * height * 3
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ParseError(
            path, "raster", f"expected {expected} bytes at offset {pos}, got {len(raster)}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, grid: np.ndarray) -> None:
    """Write an (h, w) float grid in [0, 1] as binary P5."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"expected (h, w) grid, got shape {grid.shape}")
    h, w = grid.shape
    pixels = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary P5 into an (h, w) float grid in [0, 1]."""
    data = Path(path).read_bytes()
    width, height, pos = _read_header(data, path, b"P5")
    expected = width * height
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ParseError(
            path, "raster", f"expected {expected} bytes at offset {pos}, got {len(raster)}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0
