"""Image and matrix export: CSV grids, 8-bit PGM, montages."""

from __future__ import annotations

import csv

import numpy as np
from PIL import Image


def to_uint8(image) -> np.ndarray:
    """Scale by the maximum magnitude onto 0..255."""
    image = np.abs(np.asarray(image))
    peak = image.max() if image.size else 0.0
    if peak <= 0:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.round(255.0 * image / peak).astype(np.uint8)


def write_pgm(path, image) -> None:
    """Binary (P5) 8-bit graymap normalised to the image maximum."""
    Image.fromarray(to_uint8(image), mode="L").save(path, format="PPM")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"))


def write_grid_csv(path, image) -> None:
    image = np.asarray(image, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in image:
            writer.writerow([repr(float(x)) for x in row])


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh)])


def montage(images, pad: int = 1) -> np.ndarray:
    """Side-by-side strip of max-normalised images separated by ``pad`` columns."""
    images = [np.abs(np.asarray(im, dtype=float)) for im in images]
    if not images:
        raise ValueError("montage needs at least one image")
    height = max(im.shape[0] for im in images)
    tiles = []
    for i, im in enumerate(images):
        peak = im.max()
        tile = np.zeros((height, im.shape[1]))
        tile[: im.shape[0]] = im / peak if peak > 0 else im
        if i:
            tiles.append(np.zeros((height, pad)))
        tiles.append(tile)
    return np.hstack(tiles)


def write_complex_csv(path, matrix) -> None:
    """Complex matrix as rows of ``re,im`` pairs."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([item for z in row for item in (repr(float(z.real)), repr(float(z.imag)))])


def read_complex_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh)]
    arr = np.array(rows)
    return arr[:, 0::2] + 1j * arr[:, 1::2]
