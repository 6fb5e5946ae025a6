"""Procedural image set and PPM (P6) image I/O.

Each synthetic image has a flat background colour and one to three
foreground parts. A part is a rectangle, a disc or a band of stripes, each
painted in a palette colour. Colour (and stripe/solid finish) plays the role
of an adjective-like factor; part type and placement play the noun-like one.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import atomic_write_bytes

PALETTE = np.array([
    [0.90, 0.10, 0.10],  # red
    [0.95, 0.55, 0.10],  # orange
    [0.95, 0.90, 0.15],  # yellow
    [0.15, 0.70, 0.20],  # green
    [0.15, 0.30, 0.90],  # blue
    [0.55, 0.20, 0.75],  # purple
    [0.95, 0.60, 0.75],  # pink
    [0.50, 0.30, 0.10],  # brown
    [0.05, 0.05, 0.05],  # black
    [0.97, 0.97, 0.97],  # white
    [0.50, 0.50, 0.50],  # gray
    [0.10, 0.65, 0.65],  # teal
])

SHAPES = ("rectangle", "disc", "stripes")


class DatasetError(ValueError):
    pass


def _draw_part(img: np.ndarray, rng: np.random.Generator) -> None:
    size = img.shape[1]
    yy, xx = np.mgrid[0:size, 0:size]
    colour = PALETTE[rng.integers(len(PALETTE))]
    kind = SHAPES[rng.integers(len(SHAPES))]
    if kind == "rectangle":
        y0, x0 = rng.integers(0, size - size // 4, size=2)
        hh, ww = rng.integers(size // 4, size // 2 + 1, size=2)
        mask = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
    elif kind == "disc":
        cy, cx = rng.uniform(size * 0.2, size * 0.8, size=2)
        r = rng.uniform(size * 0.12, size * 0.3)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    else:
        period = int(rng.integers(4, 9))
        horizontal = rng.random() < 0.5
        coord = yy if horizontal else xx
        lo = rng.integers(0, size // 2)
        hi = lo + rng.integers(size // 3, size // 2 + 1)
        other = xx if horizontal else yy
        mask = ((coord // (period // 2)) % 2 == 0) & (other >= lo) & (other < hi)
    img[:, mask] = colour[:, None]


def synth_dataset(n: int, size: int = 32, seed: int = 0) -> np.ndarray:
    """``n`` images as a float64 array of shape ``(n, 3, size, size)`` in [0, 1]."""
    if n <= 0:
        raise DatasetError(f"dataset size must be positive, got {n}")
    if size < 8:
        raise DatasetError(f"image size must be at least 8, got {size}")
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3, size, size))
    for k in range(n):
        img = np.empty((3, size, size))
        img[:] = PALETTE[rng.integers(len(PALETTE))][:, None, None]
        for _ in range(int(rng.integers(1, 4))):
            _draw_part(img, rng)
        out[k] = img
    return out


def write_ppm(path, img: np.ndarray) -> None:
    """Write a ``3 x H x W`` array in [0, 1] as binary 8-bit PPM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DatasetError(f"expected a 3 x H x W image, got {img.shape}")
    _, h, w = img.shape
    pix = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def _ppm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError("truncated PPM header")
        tokens.append(blob[start:pos])
    return tokens, pos + 1  # single whitespace byte before raster


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens, pos = _ppm_tokens(blob, 4)
    if tokens[0] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    raster = blob[pos:pos + 3 * w * h]
    if len(raster) != 3 * w * h:
        raise DatasetError(f"{path}: truncated raster")
    pix = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return pix.transpose(2, 0, 1).astype(np.float64) / 255.0


def load_ppm_dir(directory) -> tuple[list[Path], np.ndarray]:
    paths = sorted(Path(directory).glob("*.ppm"))
    if not paths:
        raise DatasetError(f"{directory}: no .ppm images")
    imgs = [read_ppm(p) for p in paths]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise DatasetError(f"{directory}: images differ in size {sorted(shapes)}")
    return paths, np.stack(imgs)


def write_ppm_dir(directory, images: np.ndarray, prefix: str = "img") -> list[Path]:
    directory = Path(directory)
    paths = []
    for i, img in enumerate(images):
        p = directory / f"{prefix}_{i:05d}.ppm"
        write_ppm(p, img)
        paths.append(p)
    return paths
